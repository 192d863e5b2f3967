"""Dense symmetric linear algebra and univariate statistics.

All operations are pure functions. The heavy factorizations are delegated to
LAPACK through numpy/scipy; this module enforces the package conventions on
top of them: the even-length median rule, the unscaled MAD, a scale-aware
positive-definiteness threshold for Cholesky pivots, and eigenvalues sorted
descending with a deterministic sign for the eigenvectors.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaincinv

from .errors import (
    ConvergenceFailure,
    DimensionError,
    DomainError,
    EmptyInput,
    NotPositiveDefinite,
)


class EigenDecomposition(NamedTuple):
    """Symmetric eigendecomposition, eigenvalues sorted descending.

    ``vectors`` holds orthonormal eigenvectors as columns; each column's
    largest-magnitude entry is made positive so the decomposition is unique.
    """

    values: np.ndarray
    vectors: np.ndarray


def _as_finite_vector(values) -> np.ndarray:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise EmptyInput("need at least one value")
    if not np.all(np.isfinite(v)):
        raise ValueError("input contains non-finite values")
    return v


def median(values) -> float:
    """Median of a sequence; even lengths average the two central order statistics."""
    return float(np.median(_as_finite_vector(values)))


def mad(values) -> float:
    """Median absolute deviation from the median, without any consistency scaling."""
    v = _as_finite_vector(values)
    m = np.median(v)
    return float(np.median(np.abs(v - m)))


def chi_square_quantile(dof: int, prob: float) -> float:
    """Quantile of the chi-square distribution with ``dof`` degrees of freedom.

    Solves P(dof/2, x/2) = prob for x, where P is the regularized lower
    incomplete gamma function.
    """
    if dof < 1 or int(dof) != dof:
        raise DomainError(f"degrees of freedom must be a positive integer, got {dof!r}")
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probability must lie strictly in (0, 1), got {prob!r}")
    return float(2.0 * gammaincinv(dof / 2.0, prob))


def check_symmetric(m) -> np.ndarray:
    """Validate and return a finite, exactly symmetric square matrix."""
    a = np.asarray(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix contains non-finite entries")
    if not np.array_equal(a, a.T):
        raise ValueError("matrix is not symmetric")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Average a nearly-symmetric matrix with its transpose."""
    return (a + a.T) / 2.0


def _pivot_tolerance(a: np.ndarray) -> float:
    # Scale-aware singularity threshold: pivots at or below
    # p * eps * max(diag) are treated as zero.
    return a.shape[0] * np.finfo(float).eps * float(np.max(np.diagonal(a)))


def _failing_pivot(a: np.ndarray, tol: float) -> int:
    # Unblocked factorization used only to locate the offending pivot after
    # the fast path has failed.
    p = a.shape[0]
    lower = np.zeros_like(a)
    for j in range(p):
        pivot = a[j, j] - lower[j, :j] @ lower[j, :j]
        if not np.isfinite(pivot) or pivot <= tol:
            return j
        ljj = np.sqrt(pivot)
        lower[j, j] = ljj
        if j + 1 < p:
            lower[j + 1 :, j] = (a[j + 1 :, j] - lower[j + 1 :, :j] @ lower[j, :j]) / ljj
    return p - 1


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Raises NotPositiveDefinite (with the failing pivot index) when any pivot
    falls at or below p * machine epsilon * max diagonal entry.
    """
    a = check_symmetric(m)
    tol = _pivot_tolerance(a)
    try:
        lower = np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        idx = _failing_pivot(a, tol)
        raise NotPositiveDefinite(
            f"matrix is not positive definite (pivot {idx})", pivot_index=idx
        ) from None
    pivots = np.diagonal(lower) ** 2
    bad = np.flatnonzero(pivots <= tol)
    if bad.size:
        idx = int(bad[0])
        raise NotPositiveDefinite(
            f"matrix is numerically singular (pivot {idx} = {pivots[idx]:.3e})",
            pivot_index=idx,
        )
    return lower


def log_determinant(lower: np.ndarray) -> float:
    """Log-determinant of the matrix whose lower Cholesky factor is given."""
    return float(2.0 * np.sum(np.log(np.diagonal(lower))))


def solve_spd(lower: np.ndarray, rhs) -> np.ndarray:
    """Solve m x = rhs given the lower Cholesky factor of m.

    ``rhs`` may be a vector or a matrix of stacked right-hand-side columns.
    """
    l = np.asarray(lower, dtype=float)
    b = np.asarray(rhs, dtype=float)
    if b.ndim not in (1, 2) or b.shape[0] != l.shape[0]:
        raise DimensionError(
            f"right-hand side of shape {b.shape} does not match factor of dim {l.shape[0]}"
        )
    y = solve_triangular(l, b, lower=True)
    return solve_triangular(l, y, lower=True, trans="T")


def eigen_symmetric(m) -> EigenDecomposition:
    """Full eigendecomposition of a symmetric matrix, eigenvalues descending."""
    a = check_symmetric(m)
    try:
        values, vectors = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(f"symmetric eigensolver failed: {exc}") from None
    values = values[::-1].copy()
    vectors = vectors[:, ::-1].copy()
    # Fix each eigenvector's sign so results are reproducible across runs.
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    vectors *= signs
    return EigenDecomposition(values, vectors)


def condition_number(m) -> float:
    """Ratio of the largest to the smallest eigenvalue of an SPD matrix."""
    eig = eigen_symmetric(m)
    smallest = float(eig.values[-1])
    if smallest <= 0.0:
        raise NotPositiveDefinite(
            f"smallest eigenvalue {smallest:.3e} is not positive"
        )
    return float(eig.values[0]) / smallest
