"""k-nearest-neighbour kernel density estimation in diffusion space.

Each training point carries its own Gaussian bandwidth, the distance to its
k-th nearest neighbour.  The estimate is the equal-weight mixture

    mu(z) = 1/n sum_i N(z; z_i, h_i^2 I)

so drawing from it is a smoothed bootstrap: pick a training point uniformly
and add ``h_i`` times a standard normal vector.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionError, InputError, ZeroBandwidthError

__all__ = ["KNNDensity", "fit_knn_kde", "default_k", "density_grid", "write_density_grid"]

COINCIDENT_RTOL = 1e-10


def default_k(n: int) -> int:
    return max(1, int(round(np.sqrt(n))))


@dataclass(frozen=True, eq=False)
class KNNDensity:
    points: np.ndarray = field(repr=False)
    k: int
    bandwidths: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def m(self) -> int:
        return self.points.shape[1]

    def evaluate(self, z) -> np.ndarray:
        """Density at one point (scalar) or at each row of ``z``."""
        z = np.asarray(z, dtype=float)
        single = z.ndim == 1
        z = np.atleast_2d(z)
        if z.shape[1] != self.m:
            raise DimensionError(f"query has dimension {z.shape[1]}, estimate has {self.m}")
        h2 = self.bandwidths**2
        norm = (2.0 * np.pi * h2) ** (-self.m / 2.0) / self.n
        out = _mixture_sum(np.ascontiguousarray(z), np.ascontiguousarray(self.points), -0.5 / h2, norm)
        return out[0] if single else out

    def sample(self, count: int, seed=None) -> np.ndarray:
        """Smoothed-bootstrap draws, shape ``(count, m)``; deterministic given ``seed``."""
        if count < 1:
            raise InputError("count must be >= 1")
        rng = np.random.default_rng(seed)
        idx = rng.integers(self.n, size=count)
        g = rng.standard_normal((count, self.m))
        return self.points[idx] + self.bandwidths[idx, None] * g


@numba.njit(cache=True)
def _mixture_sum(z, pts, scale, norm):
    out = np.zeros(z.shape[0])
    for a in range(z.shape[0]):
        acc = 0.0
        for i in range(pts.shape[0]):
            r2 = 0.0
            for d in range(pts.shape[1]):
                diff = z[a, d] - pts[i, d]
                r2 += diff * diff
            acc += norm[i] * np.exp(scale[i] * r2)
        out[a] = acc
    return out


def fit_knn_kde(points, k: int | None = None) -> KNNDensity:
    """Fit the adaptive estimate; ``k`` defaults to ``round(sqrt(n))``."""
    pts = np.array(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    k = default_k(n) if k is None else int(k)
    if k < 1:
        raise InputError("k must be >= 1")
    if n < k + 1:
        raise InputError(f"need at least k + 1 = {k + 1} points, got {n}")
    dist, nbr = cKDTree(pts).query(pts, k=k + 1)
    dist = np.atleast_2d(dist.T).T
    # Column 0 is the point itself unless a duplicate was returned first;
    # either way column k is the k-th neighbour among the others.
    h = dist[:, k]
    # points closer than rounding noise of the coordinate magnitude count as
    # coincident; embedded duplicate tracks differ only by eigensolver noise
    tol = COINCIDENT_RTOL * float(np.max(np.abs(pts))) if pts.size else 0.0
    if np.any(h <= tol):
        bad = int(np.flatnonzero(h <= tol)[0])
        twins = np.flatnonzero(np.linalg.norm(pts - pts[bad], axis=1) <= tol)
        raise ZeroBandwidthError(
            f"{len(twins)} coincident points (indices {twins[: k + 1].tolist()}) give zero bandwidth"
        )
    pts.setflags(write=False)
    h.setflags(write=False)
    return KNNDensity(pts, k, h)


def density_grid(est: KNNDensity, points_per_axis: int = 50, pad: float = 0.1, bounds=None):
    """Evaluate ``est`` on a regular grid covering the data (plus ``pad`` of the range).

    Returns ``(grid, values)`` with ``grid`` of shape ``(G, m)``.
    """
    if bounds is None:
        lo, hi = est.points.min(axis=0), est.points.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        bounds = list(zip(lo - pad * span, hi + pad * span))
    axes = [np.linspace(a, b, points_per_axis) for a, b in bounds]
    grid = np.array(list(itertools.product(*axes)))
    return grid, est.evaluate(grid)


def write_density_grid(path, grid: np.ndarray, values: np.ndarray) -> None:
    m = grid.shape[1]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"d{j + 1}" for j in range(m)] + ["density"])
        for row, v in zip(grid, values):
            w.writerow([repr(float(x)) for x in row] + [repr(float(v))])
