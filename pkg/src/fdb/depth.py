"""Statistical depth values and selection of the deepest h-subset.

Two depth notions are provided: projection depth, approximated with a finite
set of random unit directions, and the exact sample L2 depth. Both map every
sample to a centrality score in (0, 1]; the h-subset of deepest points is the
core set used by the robust estimators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import DegenerateData, DimensionError, InvalidSubsetSize

# Directions (projection depth) and rows (L2 depth) are processed in blocks of
# this many items to bound memory; the per-sample maximum and the per-sample
# distance sums are exact regardless of the block size.
_BLOCK = 512


def default_direction_count(p: int) -> int:
    """Adaptive direction-count rule: max(1000, 10 p)."""
    return max(1000, 10 * p)


def as_data_matrix(data) -> np.ndarray:
    """Validate and return an (n, p) float matrix with finite entries."""
    x = np.asarray(data, dtype=float)
    if x.ndim != 2:
        raise DimensionError(f"expected a 2-d sample matrix, got ndim={x.ndim}")
    n, p = x.shape
    if n < 1 or p < 1:
        raise DimensionError(f"need at least one sample and one variable, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data matrix contains non-finite entries")
    return x


@dataclass(frozen=True)
class DirectionSet:
    """A fixed set of unit projection directions, reproducible from its seed."""

    directions: np.ndarray  # (k, p), rows have Euclidean norm 1
    seed: int

    @property
    def k(self) -> int:
        return self.directions.shape[0]

    @property
    def p(self) -> int:
        return self.directions.shape[1]


def sample_directions(p: int, k: int, seed: int) -> DirectionSet:
    """Draw k independent Uniform(sphere) directions in R^p.

    Each direction is a standard-normal vector normalized to unit length;
    the zero-norm draw (a probability-zero event) is redrawn.
    """
    if p < 1:
        raise DimensionError(f"dimension must be positive, got {p}")
    if k < 1:
        raise ValueError(f"direction count must be positive, got {k}")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((k, p))
    norms = np.linalg.norm(u, axis=1)
    while np.any(norms == 0.0):
        bad = norms == 0.0
        u[bad] = rng.standard_normal((int(bad.sum()), p))
        norms = np.linalg.norm(u, axis=1)
    return DirectionSet(u / norms[:, None], seed)


def projection_depth(data, dirs: DirectionSet) -> np.ndarray:
    """Approximate projection depth of every sample.

    For sample x the outlyingness is the maximum over usable directions u of
    |u'x - med(u'X)| / MAD(u'X), and the depth is 1 / (1 + outlyingness).
    Directions with MAD(u'X) = 0 carry no usable scale and are skipped;
    if every direction is unusable the data are degenerate.
    """
    x = as_data_matrix(data)
    if dirs.p != x.shape[1]:
        raise DimensionError(
            f"directions have dimension {dirs.p}, data has dimension {x.shape[1]}"
        )
    n = x.shape[0]
    outlyingness = np.zeros(n)
    any_usable = False
    for start in range(0, dirs.k, _BLOCK):
        block = dirs.directions[start : start + _BLOCK]
        proj = x @ block.T
        med = np.median(proj, axis=0)
        dev = np.abs(proj - med)
        madv = np.median(dev, axis=0)
        usable = madv > 0.0
        if not np.any(usable):
            continue
        any_usable = True
        ratios = dev[:, usable] / madv[usable]
        np.maximum(outlyingness, ratios.max(axis=1), out=outlyingness)
    if not any_usable:
        raise DegenerateData("every projection direction has zero MAD")
    return 1.0 / (1.0 + outlyingness)


def l2_depth(data) -> np.ndarray:
    """Exact sample L2 depth: 1 / (1 + mean Euclidean distance to the sample)."""
    x = as_data_matrix(data)
    n = x.shape[0]
    mean_dist = np.empty(n)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        mean_dist[start:stop] = cdist(x[start:stop], x).sum(axis=1) / n
    return 1.0 / (1.0 + mean_dist)


def deepest_subset(depths, h: int, dim: "int | None" = None) -> np.ndarray:
    """Indices (ascending) of the h largest depth values.

    Ties at the boundary are broken in favour of the smaller original index.
    When ``dim`` is given, enforces the invertibility requirement h > dim.
    """
    d = np.asarray(depths, dtype=float).ravel()
    n = d.size
    if h > n or h < 1:
        raise InvalidSubsetSize(f"subset size {h} not in [1, {n}]")
    if dim is not None and h <= dim:
        raise InvalidSubsetSize(f"subset size {h} must exceed the dimension {dim}")
    order = np.argsort(-d, kind="stable")
    return np.sort(order[:h])
