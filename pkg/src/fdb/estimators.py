"""Robust location and scatter estimation pipelines.

The fast depth-based estimator selects the h deepest samples, takes their
mean and covariance, rescales the covariance with a median-based consistency
factor, and applies a one-pass reweighting. A concentration-step (C-step)
baseline in the FASTMCD style and an exhaustive minimum-determinant oracle
for tiny instances are provided for comparison and testing.
"""

from __future__ import annotations

import math
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field
from itertools import chain, combinations, islice

import numpy as np
from scipy.linalg import solve_triangular

from . import depth as depth_mod
from . import numeric
from .depth import as_data_matrix, deepest_subset, default_direction_count
from .errors import (
    DegenerateData,
    DimensionError,
    FdbError,
    InvalidSubsetSize,
    NotPositiveDefinite,
    OracleTooLarge,
    SingularCovariance,
    TooFewWeightedSamples,
)

_RIDGE_SCALE = 1e-10
_DET_TOL = 1e-12
_MAX_C_STEPS = 100


@dataclass
class LocationScatter:
    """A (mu, sigma) estimate with positive definite sigma.

    ``provenance`` records the pipeline stage that produced the estimate:
    raw, reweighted, cstep or oracle.
    """

    mu: np.ndarray
    sigma: np.ndarray
    provenance: str = "raw"

    @property
    def p(self) -> int:
        return self.mu.shape[0]


@dataclass
class EstimatorConfig:
    """Configuration of a depth-based estimation run.

    ``alpha`` sets the core-set size h = floor(alpha * n) unless ``h`` is
    given explicitly; ``k`` is the direction count for projection depth
    (``None`` means the adaptive rule max(1000, 10 p)).
    """

    alpha: float = 0.75
    h: "int | None" = None
    depth: str = "projection"
    k: "int | None" = None
    seed: int = 0
    reweight: bool = True

    def __post_init__(self):
        if not 0.5 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0.5, 1], got {self.alpha}")
        if self.depth not in ("projection", "l2"):
            raise ValueError(f"unknown depth notion {self.depth!r}")

    def resolve_h(self, n: int, p: int) -> int:
        h = self.h if self.h is not None else int(math.floor(self.alpha * n))
        if not p < h <= n:
            raise InvalidSubsetSize(f"subset size {h} violates p < h <= n for n={n}, p={p}")
        return h

    def resolve_k(self, p: int) -> int:
        return self.k if self.k is not None else default_direction_count(p)


@dataclass
class ReweightResult:
    """Outcome of the reweighting pass: 0/1 weights, the consistency factor
    c0, and the reweighted estimate."""

    weights: np.ndarray
    c0: float
    estimate: LocationScatter


@dataclass
class EstimationReport:
    """Full record of one estimation run."""

    estimate: LocationScatter
    subset: np.ndarray
    weights: "np.ndarray | None"
    c0: "float | None"
    c1: float
    distances_sq: np.ndarray
    elapsed_seconds: float
    subset_seconds: float = field(default=0.0)
    method: str = ""


@contextmanager
def _stage(name: str):
    # Tags propagated errors with the pipeline stage that raised them.
    try:
        yield
    except FdbError as err:
        if err.stage is None:
            err.stage = name
        raise


def subset_mean_cov(
    data,
    subset,
    denominator: str = "h-1",
    ridge: bool = False,
    provenance: str = "raw",
) -> LocationScatter:
    """Mean and covariance of the rows selected by ``subset``.

    ``denominator`` is the literal divisor convention, "h" or "h-1". With
    ``ridge`` enabled a singular covariance is repaired by adding
    (1e-10 * trace / p) * I before failing; this is meant for elemental
    starts only, since it perturbs the determinant objective.
    """
    x = as_data_matrix(data)
    idx = np.asarray(subset, dtype=int).ravel()
    h = idx.size
    if denominator not in ("h", "h-1"):
        raise ValueError(f"denominator must be 'h' or 'h-1', got {denominator!r}")
    div = h if denominator == "h" else h - 1
    if div < 1:
        raise InvalidSubsetSize(f"subset of size {h} is too small for denominator {denominator}")
    rows = x[idx]
    mu = rows.mean(axis=0)
    centered = rows - mu
    sigma = numeric.symmetrize(centered.T @ centered / div)
    try:
        numeric.cholesky(sigma)
    except NotPositiveDefinite as exc:
        if not ridge:
            raise SingularCovariance(
                f"subset covariance is singular ({exc})"
            ) from None
        bump = _RIDGE_SCALE * float(np.trace(sigma)) / sigma.shape[0]
        sigma = numeric.symmetrize(sigma + bump * np.eye(sigma.shape[0]))
        try:
            numeric.cholesky(sigma)
        except NotPositiveDefinite as exc2:
            raise SingularCovariance(
                f"subset covariance is singular even after ridge repair ({exc2})"
            ) from None
    return LocationScatter(mu, sigma, provenance)


def mahalanobis_sq(data, ls: LocationScatter) -> np.ndarray:
    """Squared Mahalanobis distances of every sample under (mu, sigma).

    Computed through the Cholesky factor as |L^-1 (x - mu)|^2, which is
    nonnegative by construction.
    """
    x = as_data_matrix(data)
    if x.shape[1] != ls.p:
        raise DimensionError(
            f"data dimension {x.shape[1]} does not match estimate dimension {ls.p}"
        )
    lower = numeric.cholesky(ls.sigma)
    z = solve_triangular(lower, (x - ls.mu).T, lower=True)
    return np.einsum("ij,ij->j", z, z)


def _smallest_distance_subset(d2: np.ndarray, h: int) -> np.ndarray:
    # Ties broken by lower index via the stable sort.
    return np.sort(np.argsort(d2, kind="stable")[:h])


def c_step(data, state: LocationScatter, h: int):
    """One concentration step from the given estimate.

    Selects the h samples with smallest squared Mahalanobis distance under
    ``state`` and returns their mean/covariance (denominator h-1). When the
    incoming state was itself computed from an h-subset with denominator h-1,
    the determinant never increases.
    """
    x = as_data_matrix(data)
    n, p = x.shape
    if not p < h <= n:
        raise InvalidSubsetSize(f"subset size {h} violates p < h <= n for n={n}, p={p}")
    d2 = mahalanobis_sq(x, state)
    subset = _smallest_distance_subset(d2, h)
    return subset, subset_mean_cov(x, subset, "h-1", provenance="cstep")


def iterate_c_steps(data, start: LocationScatter, h: int, max_iter: int = _MAX_C_STEPS):
    """Concentration steps until the subset repeats or the determinant stalls.

    Returns (subset, estimate, iterations). Stops when the newly selected
    subset equals the previous one, when the relative determinant decrease
    falls below 1e-12, or after ``max_iter`` estimate updates.
    """
    x = as_data_matrix(data)
    n, p = x.shape
    if not p < h <= n:
        raise InvalidSubsetSize(f"subset size {h} violates p < h <= n for n={n}, p={p}")
    state = start
    subset = None
    prev_logdet = None
    iterations = 0
    while iterations < max_iter:
        d2 = mahalanobis_sq(x, state)
        new_subset = _smallest_distance_subset(d2, h)
        if subset is not None and np.array_equal(new_subset, subset):
            break
        subset = new_subset
        state = subset_mean_cov(x, subset, "h-1", provenance="cstep")
        iterations += 1
        logdet = numeric.log_determinant(numeric.cholesky(state.sigma))
        if prev_logdet is not None and prev_logdet - logdet < _DET_TOL:
            break
        prev_logdet = logdet
    if subset is None:  # max_iter == 0 guard; never hit in normal use
        raise ValueError("at least one iteration is required")
    return subset, state, iterations


def reweight(data, ls: LocationScatter) -> ReweightResult:
    """One-pass reweighting of an estimate.

    c0 rescales sigma so the median squared distance matches the chi-square
    median; samples beyond the sqrt(chi2_{p,0.975}) cutoff under the rescaled
    scatter get weight zero. The reweighted covariance uses denominator
    (sum of weights - 1) with no further correction factor.
    """
    x = as_data_matrix(data)
    n, p = x.shape
    d2 = mahalanobis_sq(x, ls)
    c0 = float(np.median(d2)) / numeric.chi_square_quantile(p, 0.5)
    if c0 <= 0.0:
        raise SingularCovariance("median squared distance is zero; cannot calibrate weights")
    weights = (d2 / c0 <= numeric.chi_square_quantile(p, 0.975)).astype(np.int8)
    kept = int(weights.sum())
    if kept <= p + 1:
        raise TooFewWeightedSamples(
            f"reweighting kept {kept} samples, need more than {p + 1}"
        )
    w = weights.astype(float)
    mu = (w[:, None] * x).sum(axis=0) / kept
    centered = x - mu
    sigma = numeric.symmetrize((w[:, None] * centered).T @ centered / (kept - 1))
    try:
        numeric.cholesky(sigma)
    except NotPositiveDefinite as exc:
        raise SingularCovariance(f"reweighted covariance is singular ({exc})") from None
    return ReweightResult(weights, c0, LocationScatter(mu, sigma, "reweighted"))


def _consistency_scale(data, raw: LocationScatter) -> "tuple[float, LocationScatter]":
    # c1 = med_i D^2(x_i; mu, sigma0) / chi2_{p, 0.5}, applied to sigma0.
    p = raw.p
    d2 = mahalanobis_sq(data, raw)
    c1 = float(np.median(d2)) / numeric.chi_square_quantile(p, 0.5)
    if c1 <= 0.0:
        raise SingularCovariance("median squared distance is zero; cannot scale scatter")
    scaled = LocationScatter(raw.mu, numeric.symmetrize(c1 * raw.sigma), "raw")
    return c1, scaled


def _finish_report(
    data,
    subset: np.ndarray,
    do_reweight: bool,
    t0: float,
    t_subset: float,
    method: str,
) -> EstimationReport:
    # Shared tail of both estimators: h-denominator scatter, c1 scaling,
    # optional reweighting, final distances and timings.
    with _stage("scatter"):
        raw = subset_mean_cov(data, subset, "h", provenance="raw")
    with _stage("scaling"):
        c1, scaled = _consistency_scale(data, raw)
    if do_reweight:
        with _stage("reweight"):
            rw = reweight(data, scaled)
        estimate, weights, c0 = rw.estimate, rw.weights, rw.c0
    else:
        estimate, weights, c0 = scaled, None, None
    d2 = mahalanobis_sq(data, estimate)
    elapsed = time.perf_counter() - t0
    return EstimationReport(
        estimate=estimate,
        subset=subset,
        weights=weights,
        c0=c0,
        c1=c1,
        distances_sq=d2,
        elapsed_seconds=elapsed,
        subset_seconds=t_subset - t0,
        method=method,
    )


def fdb_estimate(data, config: EstimatorConfig) -> EstimationReport:
    """Depth-based robust location/scatter estimate.

    Pipeline: depth values -> deepest h-subset -> subset mean and
    h-denominator covariance -> consistency scaling by c1 -> optional
    reweighting. Timing covers the whole pipeline; ``subset_seconds``
    covers the subset pursuit only.
    """
    t0 = time.perf_counter()
    x = as_data_matrix(data)
    n, p = x.shape
    h = config.resolve_h(n, p)
    if n <= 5 * p:
        warnings.warn(
            f"n={n} samples with p={p} variables; results are unreliable unless n > 5p",
            stacklevel=2,
        )
    with _stage("depth"):
        if config.depth == "projection":
            dirs = depth_mod.sample_directions(p, config.resolve_k(p), config.seed)
            depths = depth_mod.projection_depth(x, dirs)
        else:
            depths = depth_mod.l2_depth(x)
    with _stage("subset"):
        subset = deepest_subset(depths, h, dim=p)
    t_subset = time.perf_counter()
    method = "fdb-pro" if config.depth == "projection" else "fdb-l2"
    return _finish_report(x, subset, config.reweight, t0, t_subset, method)


def fastmcd_baseline(
    data,
    h: int,
    n_starts: int = 500,
    seed: int = 0,
    reweight_estimate: bool = True,
) -> EstimationReport:
    """FASTMCD-style baseline: random elemental starts plus concentration steps.

    Draws ``n_starts`` random (p+1)-subsets, builds their (ridge-repaired)
    mean/covariance, applies two C-steps to each, keeps the ten best by
    determinant, iterates those to convergence, and finishes the winner with
    the same consistency scaling and reweighting as the depth pipeline.
    Per-start RNG streams are derived from (seed, start index) so the result
    does not depend on evaluation order.
    """
    t0 = time.perf_counter()
    x = as_data_matrix(data)
    n, p = x.shape
    if not p < h <= n:
        raise InvalidSubsetSize(f"subset size {h} violates p < h <= n for n={n}, p={p}")
    if n_starts < 1:
        raise ValueError(f"need at least one start, got {n_starts}")

    candidates = []  # (logdet, start index, subset, state)
    for s in range(n_starts):
        rng = np.random.default_rng((seed, s))
        elemental = np.sort(rng.choice(n, size=p + 1, replace=False))
        try:
            state = subset_mean_cov(x, elemental, "h-1", ridge=True, provenance="cstep")
            subset, state = c_step(x, state, h)
            subset, state = c_step(x, state, h)
        except SingularCovariance:
            continue
        logdet = numeric.log_determinant(numeric.cholesky(state.sigma))
        candidates.append((logdet, s, subset, state))
    if not candidates:
        raise DegenerateData("every elemental start produced a singular covariance")

    candidates.sort(key=lambda item: (item[0], item[1]))
    best_logdet = np.inf
    best_subset = None
    for _, _, subset, state in candidates[:10]:
        try:
            subset, state, _ = iterate_c_steps(x, state, h)
        except SingularCovariance:
            continue
        logdet = numeric.log_determinant(numeric.cholesky(state.sigma))
        if logdet < best_logdet:
            best_logdet = logdet
            best_subset = subset
    if best_subset is None:
        raise DegenerateData("no start could be concentrated to a non-singular subset")
    t_subset = time.perf_counter()
    return _finish_report(x, best_subset, reweight_estimate, t0, t_subset, "fastmcd")


# Chunk bound for the exhaustive oracle: at most this many subset index
# entries are materialized at once.
_ORACLE_CHUNK_ENTRIES = 5_000_000
_ORACLE_LIMIT = 1_000_000


def exhaustive_mcd(data, h: int):
    """Global minimum-determinant h-subset by full enumeration.

    Only available when C(n, h) <= 1e6. Ties are broken by lexicographic
    subset order (the enumeration order). Returns the subset and its
    mean/covariance with denominator h-1.
    """
    x = as_data_matrix(data)
    n, p = x.shape
    if not p < h <= n:
        raise InvalidSubsetSize(f"subset size {h} violates p < h <= n for n={n}, p={p}")
    total = math.comb(n, h)
    if total > _ORACLE_LIMIT:
        raise OracleTooLarge(f"C({n}, {h}) = {total} exceeds the oracle bound {_ORACLE_LIMIT}")

    chunk = max(1, _ORACLE_CHUNK_ENTRIES // h)
    best_logdet = np.inf
    best_subset = None
    iterator = combinations(range(n), h)
    while True:
        block = list(islice(iterator, chunk))
        if not block:
            break
        idx = np.fromiter(
            chain.from_iterable(block), dtype=np.int64, count=len(block) * h
        ).reshape(len(block), h)
        rows = x[idx]  # (c, h, p)
        mu = rows.mean(axis=1)
        centered = rows - mu[:, None, :]
        cov = np.einsum("chi,chj->cij", centered, centered) / (h - 1)
        sign, logdet = np.linalg.slogdet(cov)
        logdet = np.where(sign > 0, logdet, -np.inf)
        j = int(np.argmin(logdet))
        if logdet[j] < best_logdet:
            best_logdet = float(logdet[j])
            best_subset = idx[j]
    subset = np.asarray(best_subset, dtype=int)
    return subset, subset_mean_cov(x, subset, "h-1", provenance="oracle")
