"""Diffusion maps on track sets.

The kernel is ``w(x, y) = exp(-delta(x, y)**2 / epsilon)`` and the random walk
is its row normalization ``P = D^-1 W``.  Eigenpairs of ``P`` are obtained
from the symmetric conjugate ``S = D^-1/2 W D^-1/2`` and converted back as
``psi = v / sqrt(phi0)``, where ``phi0`` is the stationary distribution.  With
that normalization ``psi_0 == 1`` and the biorthogonality
``sum_z phi0(z) psi_j(z) psi_k(z) = delta_jk`` holds, which is what makes the
full spectral sum reproduce diffusion distances exactly.
"""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    IllConditionedExtensionError,
    InputError,
    NumericalError,
    SingularStationaryError,
)
from .trackdata import TrackSet, delta_matrix, delta_pdist, track_distance

__all__ = [
    "DiffusionModel",
    "CVResult",
    "build_model",
    "embed",
    "diffusion_distance_exact",
    "spectral_distance_sq",
    "extension_rows",
    "nystrom_extend",
    "nystrom_extend_many",
    "default_cv_grid",
    "cross_validate",
]

ROW_SUM_TOL = 1e-12
EIG_RESIDUAL_TOL = 1e-8
LAMBDA_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class DiffusionModel:
    epsilon: float
    t: int
    m: int
    kernel: np.ndarray = field(repr=False)
    transition: np.ndarray = field(repr=False)
    eigenvalues: np.ndarray = field(repr=False)
    eigenvectors: np.ndarray = field(repr=False)  # columns psi_0, psi_1, ...
    stationary: np.ndarray = field(repr=False)
    tracks: TrackSet = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.stationary)

    @cached_property
    def embedding(self) -> np.ndarray:
        lam = self.eigenvalues[1 : self.m + 1]
        return self.eigenvectors[:, 1 : self.m + 1] * lam**self.t

    def with_t(self, t: int) -> "DiffusionModel":
        if t < 1:
            raise InputError("t must be >= 1")
        return replace(self, t=int(t))

    def with_m(self, m: int) -> "DiffusionModel":
        if not 1 <= m < self.eigenvectors.shape[1]:
            raise InputError(f"m={m} needs more than {self.eigenvectors.shape[1]} eigenpairs")
        return replace(self, m=int(m))

    def check_invariants(self) -> None:
        """Raise :class:`NumericalError` unless the stored spectrum is consistent."""
        P, lam, psi, phi = self.transition, self.eigenvalues, self.eigenvectors, self.stationary
        row_err = np.max(np.abs(P.sum(axis=1) - 1.0))
        if row_err > ROW_SUM_TOL:
            raise NumericalError(f"transition rows deviate from 1 by {row_err:.2e}")
        if abs(lam[0] - 1.0) > 1e-10:
            raise NumericalError(f"leading eigenvalue is {lam[0]!r}, expected 1")
        if np.any(np.abs(lam) > 1.0 + 1e-10):
            raise NumericalError("eigenvalue outside the unit disc")
        k = min(self.m + 1, psi.shape[1])
        resid = np.max(np.abs(P @ psi[:, :k] - psi[:, :k] * lam[:k]))
        if resid > EIG_RESIDUAL_TOL:
            raise NumericalError(f"eigen-residual {resid:.2e} exceeds {EIG_RESIDUAL_TOL}")
        if np.any(phi < 0) or abs(phi.sum() - 1.0) > 1e-12:
            raise NumericalError("stationary distribution is not a probability vector")
        stat_err = np.max(np.abs(phi @ P - phi))
        if stat_err > 1e-8:
            raise NumericalError(f"stationary residual {stat_err:.2e}")

    def to_dict(self) -> dict:
        return {
            "epsilon": float(self.epsilon),
            "t": int(self.t),
            "m": int(self.m),
            "n": int(self.n),
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "trackset_sha256": self.tracks.content_hash(),
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _orient(vecs: np.ndarray) -> np.ndarray:
    """Flip each column so that its largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def build_model(
    tracks: TrackSet,
    epsilon: float,
    t: int = 1,
    m: int = 3,
    n_eigs: int | None = None,
    distances: np.ndarray | None = None,
) -> DiffusionModel:
    """Build the diffusion map of a track set.

    Parameters
    ----------
    tracks : TrackSet
    epsilon : float
        Kernel scale in squared-distance units.
    t : int
        Number of random-walk steps.
    m : int
        Embedding dimension.
    n_eigs : int, optional
        Compute only the leading ``n_eigs`` eigenpairs (by algebraic value).
        The default computes the full spectrum, ordered by magnitude.
    distances : ndarray, optional
        Precomputed ``(n, n)`` track distance matrix.
    """
    n = len(tracks)
    if epsilon <= 0 or not np.isfinite(epsilon):
        raise InputError(f"epsilon must be positive, got {epsilon}")
    if t < 1:
        raise InputError(f"t must be >= 1, got {t}")
    if not 1 <= m <= n - 1:
        raise InputError(f"need 1 <= m <= n - 1 (n={n}, m={m})")

    D = delta_pdist(tracks) if distances is None else np.asarray(distances, dtype=float)
    if D.shape != (n, n):
        raise DimensionError(f"distance matrix has shape {D.shape}, expected {(n, n)}")
    if not np.all(np.isfinite(D)):
        raise NumericalError("non-finite track distances")
    off = D[~np.eye(n, dtype=bool)]
    if np.any(off == 0):
        warnings.warn("duplicate tracks present; the kernel matrix is rank deficient")

    W = np.exp(-(D**2) / epsilon)
    deg = W.sum(axis=1)
    P = W / deg[:, None]
    phi = deg / deg.sum()
    root = np.sqrt(deg)
    S = W / root[:, None] / root[None, :]
    S = 0.5 * (S + S.T)

    if n_eigs is None:
        lam, vec = scipy.linalg.eigh(S)
        order = np.lexsort((-lam, -np.abs(lam)))
    else:
        k = min(max(int(n_eigs), m + 1), n)
        lam, vec = scipy.linalg.eigh(S, subset_by_index=[n - k, n - 1])
        order = np.argsort(-lam, kind="stable")
    lam, vec = lam[order], vec[:, order]

    # The leading eigenvector of S is sqrt(phi0) exactly.  When the graph is
    # nearly disconnected lambda_1 ~ 1 and the solver may return any mix of
    # the two, so pin it and project it out of the others.
    v0 = np.sqrt(phi)
    vec = vec[:, 1:] - np.outer(v0, v0 @ vec[:, 1:])
    vec = np.column_stack([v0, vec / np.linalg.norm(vec, axis=0)])
    psi = _orient(vec / v0[:, None])
    psi[:, 0] = 1.0

    model = DiffusionModel(float(epsilon), int(t), int(m), W, P, lam, psi, phi, tracks)
    model.check_invariants()
    return model


def embed(model: DiffusionModel) -> np.ndarray:
    """Diffusion coordinates ``lambda_j**t * psi_j(x)``, ``j = 1..m``, one row per track."""
    return model.embedding


def diffusion_distance_exact(model: DiffusionModel, i: int, j: int) -> float:
    """Squared diffusion distance by explicit ``t``-fold powers of ``P``.

    Brute force: no eigenvectors are used, so this serves as an oracle for the
    spectral formula.
    """
    phi = model.stationary
    if np.any(phi <= 0):
        raise SingularStationaryError("stationary distribution has zero entries")
    Pt = np.linalg.matrix_power(model.transition, model.t)
    diff = Pt[i] - Pt[j]
    return float(np.sum(diff**2 / phi))


def spectral_distance_sq(model: DiffusionModel, i: int, j: int, terms: int | None = None) -> float:
    """Truncated spectral sum ``sum_{k=1..terms} lambda_k**(2t) (psi_k(i) - psi_k(j))**2``."""
    lam, psi = model.eigenvalues, model.eigenvectors
    terms = psi.shape[1] - 1 if terms is None else terms
    sl = slice(1, terms + 1)
    return float(np.sum(lam[sl] ** (2 * model.t) * (psi[i, sl] - psi[j, sl]) ** 2))


def extension_rows(model: DiffusionModel, Y) -> np.ndarray:
    """Transition rows from new tracks ``Y`` to the training set.

    Each row is normalized exactly; the common factor ``exp(-min d^2 / eps)``
    is divided out first so that rows far from all training data do not
    underflow.
    """
    D2 = delta_matrix(Y, model.tracks.points) ** 2
    D2 -= D2.min(axis=1, keepdims=True)
    W = np.exp(-D2 / model.epsilon)
    return W / W.sum(axis=1, keepdims=True)


def _check_extension(model: DiffusionModel) -> None:
    lam = model.eigenvalues[1 : model.m + 1]
    small = np.flatnonzero(np.abs(lam) < LAMBDA_FLOOR)
    if small.size:
        j = int(small[0]) + 1
        raise IllConditionedExtensionError(j, float(model.eigenvalues[j]))


def nystrom_extend_many(model: DiffusionModel, Y, rows: np.ndarray | None = None) -> np.ndarray:
    """Extended diffusion coordinates of new tracks, shape ``(len(Y), m)``.

    ``coords_j(y) = lambda_j**(t-1) * sum_z p(y, z) psi_j(z)``, which equals
    the training embedding when ``y`` is a training track.
    """
    _check_extension(model)
    if rows is None:
        Y = getattr(Y, "points", Y)
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 2:
            Y = Y[None]
        if Y.shape[1:] != model.tracks.points.shape[1:]:
            raise DimensionError(
                f"track shape {Y.shape[1:]} differs from training {model.tracks.points.shape[1:]}"
            )
        rows = extension_rows(model, Y)
    lam = model.eigenvalues[1 : model.m + 1]
    return (rows @ model.eigenvectors[:, 1 : model.m + 1]) * lam ** (model.t - 1)


def nystrom_extend(model: DiffusionModel, y) -> np.ndarray:
    return nystrom_extend_many(model, y)[0]


# --------------------------------------------------------------------------
# cross-validation


@dataclass(frozen=True)
class CVResult:
    best: tuple[float, int]
    candidates: tuple[tuple[float, int], ...]
    errors: np.ndarray  # (n_candidates, n_heldout); inf marks an infeasible build
    heldout: np.ndarray

    @property
    def totals(self) -> np.ndarray:
        return self.errors.sum(axis=1)

    def to_dict(self) -> dict:
        return {
            "best": {"epsilon": float(self.best[0]), "t": int(self.best[1])},
            "heldout": [int(i) for i in self.heldout],
            "table": [
                {"epsilon": float(e), "t": int(t), "error": _jsonable(tot), "feasible": bool(np.isfinite(tot))}
                for (e, t), tot in zip(self.candidates, self.totals)
            ],
        }


def _jsonable(x):
    x = float(x)
    return x if np.isfinite(x) else None


def default_cv_grid(distances: np.ndarray, n_eps: int = 7, ts=(1, 2, 3)) -> list[tuple[float, int]]:
    """Log-spaced epsilons between the 10th and 90th percentiles of pairwise squared distances."""
    n = len(distances)
    d2 = distances[np.triu_indices(n, 1)] ** 2
    lo, hi = np.percentile(d2, [10, 90])
    eps = np.geomspace(lo, hi, n_eps)
    return [(float(e), int(t)) for e in eps for t in ts]


def _cv_task(args):
    from .preimage import PreimageConfig, preimage

    tracks, D, i, eps, ts, m, config = args
    keep = np.delete(np.arange(len(tracks)), i)
    x = tracks.points[i]
    out = []
    try:
        base = build_model(tracks.subset(keep), eps, ts[0], m, n_eigs=m + 1, distances=D[np.ix_(keep, keep)])
    except Exception:
        return [np.inf] * len(ts)
    for t in ts:
        try:
            model = base.with_t(t)
            cfg = config.resolve(model) if config is not None else PreimageConfig().resolve(model)
            zeta = nystrom_extend(model, x)
            xhat = preimage(zeta, model, cfg).track
            out.append(track_distance(x, xhat))
        except Exception:
            out.append(np.inf)
    return out


def cross_validate(
    tracks: TrackSet,
    grid: Sequence[tuple[float, int]] | None = None,
    m: int = 3,
    preimage_config=None,
    heldout: Sequence[int] | None = None,
    jobs: int = 1,
    distances: np.ndarray | None = None,
) -> CVResult:
    """Leave-one-out selection of ``(epsilon, t)``.

    For every candidate and every held-out index ``i``: rebuild the map
    without ``x_i``, extend ``x_i`` into it, invert the extension with the
    pre-image search and record ``delta(x_i, x_i_hat)``.  The candidate with
    the smallest total wins; ties go to the smaller epsilon, then smaller t.

    ``heldout`` restricts the sum to a subset of indices (all by default).
    """
    n = len(tracks)
    if n < 10:
        raise InputError(f"cross-validation needs n >= 10, got {n}")
    D = delta_pdist(tracks) if distances is None else distances
    grid = default_cv_grid(D) if grid is None else [(float(e), int(t)) for e, t in grid]
    if not grid:
        raise InputError("empty cross-validation grid")
    heldout = np.arange(n) if heldout is None else np.asarray(heldout, dtype=int)

    by_eps: dict[float, list[int]] = {}
    for e, t in grid:
        by_eps.setdefault(e, [])
        if t not in by_eps[e]:
            by_eps[e].append(t)
    tasks = [(tracks, D, int(i), e, tuple(ts), m, preimage_config) for e, ts in by_eps.items() for i in heldout]

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_cv_task, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_cv_task(task) for task in tasks]

    per = {}
    for (_, _, i, e, ts, _, _), errs in zip(tasks, results):
        for t, err in zip(ts, errs):
            per[(e, t, i)] = err
    candidates = tuple(dict.fromkeys(grid))
    errors = np.array([[per[(e, t, int(i))] for i in heldout] for e, t in candidates])
    totals = errors.sum(axis=1)
    order = sorted(range(len(candidates)), key=lambda c: (totals[c], candidates[c][0], candidates[c][1]))
    return CVResult(candidates[order[0]], candidates, errors, heldout)
