"""Pre-images of diffusion-space points.

A point ``zeta`` is inverted by searching over convex combinations of the
training tracks.  Weights are a softmax of negative squared embedded
distances with temperature ``sigma``; the combined track may additionally be
dilated about its first point (origination) or last point (lysis) by a
factor in ``[0.75, 1.5]``.  Each candidate is pushed back through the
Nystrom extension and the one landing closest to ``zeta`` wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist

from .diffusion import DiffusionModel, extension_rows, nystrom_extend_many
from .errors import InputError, NumericalError

__all__ = [
    "ANCHORS",
    "DEFAULT_STRETCHES",
    "PreimageConfig",
    "PreimageResult",
    "default_sigmas",
    "weights",
    "combine",
    "candidate_tracks",
    "preimage",
    "preimage_many",
]

ANCHORS = ("origination", "lysis")
STRETCH_MIN, STRETCH_MAX = 0.75, 1.5
DEFAULT_STRETCHES = tuple(round(0.75 + 0.05 * k, 2) for k in range(16))


def default_sigmas(embedding: np.ndarray, count: int = 9) -> tuple[float, ...]:
    """The limit ``0`` followed by ``count`` log-spaced values over ``[0.1 q25, 10 q75]``.

    Quartiles are of the squared embedded pairwise distances.  ``sigma = 0``
    stands for the limit of the softmax as ``sigma -> 0``: all weight on the
    nearest embedded track, so a training track can be returned exactly.
    """
    d2 = pdist(embedding, "sqeuclidean")
    d2 = d2[d2 > 0]
    if d2.size == 0:
        return (0.0, 1.0)
    q25, q75 = np.percentile(d2, [25, 75])
    return (0.0,) + tuple(float(s) for s in np.geomspace(0.1 * q25, 10.0 * q75, count))


@dataclass(frozen=True)
class PreimageConfig:
    sigmas: tuple[float, ...] | None = None
    stretches: tuple[float, ...] = DEFAULT_STRETCHES
    anchors: tuple[str, ...] = ANCHORS
    truncate: float = 1e-10

    def __post_init__(self):
        if self.sigmas is not None:
            if not self.sigmas or any(not s >= 0 for s in self.sigmas):
                raise InputError("sigma grid must be nonempty and nonnegative")
        if not self.stretches:
            raise InputError("stretch grid must be nonempty")
        for s in self.stretches:
            if not STRETCH_MIN <= s <= STRETCH_MAX:
                raise InputError(f"stretch {s} outside [{STRETCH_MIN}, {STRETCH_MAX}]")
        if not self.anchors or any(a not in ANCHORS for a in self.anchors):
            raise InputError(f"anchors must be drawn from {ANCHORS}")

    def resolve(self, model: DiffusionModel) -> "PreimageConfig":
        """Fill in the data-driven sigma grid for ``model``."""
        if self.sigmas is not None:
            return self
        return replace(self, sigmas=default_sigmas(model.embedding))


@dataclass(frozen=True, eq=False)
class PreimageResult:
    track: np.ndarray
    weights: np.ndarray = field(repr=False)
    sigma: float
    stretch: float
    anchor: str
    objective: float
    coords: np.ndarray = field(repr=False)


def weights(zeta, embedding: np.ndarray, sigma: float) -> np.ndarray:
    """Softmax of ``-||zeta - Psi(x)||^2 / sigma`` over the training tracks."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    return _softmax_grid(zeta, embedding, np.array([sigma], dtype=float))[0]


def _softmax_grid(zeta, embedding: np.ndarray, sigmas: np.ndarray) -> np.ndarray:
    d2 = np.sum((np.asarray(embedding) - np.asarray(zeta)) ** 2, axis=1)
    if not np.any(np.isfinite(d2)):
        raise NumericalError("no finite embedded distances")
    # shifting by the smallest distance keeps the largest logit at zero
    shifted = (d2 - d2.min())[None, :]
    pos = sigmas > 0
    w = np.zeros((len(sigmas), len(d2)))
    w[pos] = np.exp(-shifted / sigmas[pos, None])
    w[~pos, np.argmin(d2)] = 1.0  # sigma -> 0 limit, smallest index on ties
    return w / w.sum(axis=1, keepdims=True)


def combine(w: np.ndarray, tracks, stretch: float = 1.0, anchor: str = "origination") -> np.ndarray:
    """Weighted average of tracks, dilated about its first or last point."""
    X = np.asarray(getattr(tracks, "points", tracks), dtype=float)
    mean = np.tensordot(np.asarray(w, dtype=float), X, axes=1)
    if stretch == 1.0:
        return mean
    if anchor not in ANCHORS:
        raise InputError(f"unknown anchor {anchor!r}")
    a = mean[0] if anchor == "origination" else mean[-1]
    return a + stretch * (mean - a)


def _truncated(w: np.ndarray, tol: float) -> np.ndarray:
    if tol <= 0:
        return w
    w = np.where(w < tol, 0.0, w)
    return w / w.sum(axis=-1, keepdims=True)


def candidate_tracks(zeta, model: DiffusionModel, config: PreimageConfig):
    """All grid candidates in canonical order.

    Returns ``(tracks, weights, keys)`` where ``tracks`` has shape
    ``(K, p, 2)``, ``weights`` holds one simplex vector per sigma and ``keys``
    lists ``(sigma_index, stretch, anchor)`` per candidate.
    """
    config = config.resolve(model)
    X = model.tracks.points
    n, p, _ = X.shape
    W = _truncated(_softmax_grid(zeta, model.embedding, np.asarray(config.sigmas, dtype=float)), config.truncate)
    means = (W @ X.reshape(n, -1)).reshape(len(W), p, 2)
    stretches = np.asarray(config.stretches, dtype=float)
    cands, keys = [], []
    for si, mean in enumerate(means):
        for anchor in config.anchors:
            a = mean[0] if anchor == "origination" else mean[-1]
            block = a + stretches[:, None, None] * (mean - a)
            block[stretches == 1.0] = mean  # exact, so training tracks are reproducible
            cands.append(block)
            keys.extend((si, float(s), anchor) for s in stretches)
    return np.concatenate(cands), list(W), keys


def preimage(zeta, model: DiffusionModel, config: PreimageConfig | None = None) -> PreimageResult:
    """Grid search for the track whose Nystrom extension lands nearest ``zeta``.

    Ties in the objective go to the smaller sigma, then the stretch
    nearer 1 (smaller first), then the origination anchor.
    """
    config = (config or PreimageConfig()).resolve(model)
    zeta = np.asarray(zeta, dtype=float)
    tracks, ws, keys = candidate_tracks(zeta, model, config)
    coords = nystrom_extend_many(model, tracks, rows=extension_rows(model, tracks))
    obj = np.sum((coords - zeta) ** 2, axis=1)

    sig = np.array([k[0] for k in keys])
    st = np.array([k[1] for k in keys])
    anc = np.array([ANCHORS.index(k[2]) for k in keys])
    best = np.lexsort((anc, st, np.abs(st - 1.0), sig, obj))[0]
    si, s, anchor = keys[best]
    return PreimageResult(
        track=tracks[best],
        weights=ws[si],
        sigma=config.sigmas[si],
        stretch=s,
        anchor=anchor,
        objective=float(obj[best]),
        coords=coords[best],
    )


def preimage_many(Z, model: DiffusionModel, config: PreimageConfig | None = None) -> list[PreimageResult]:
    config = (config or PreimageConfig()).resolve(model)
    return [preimage(z, model, config) for z in np.atleast_2d(Z)]
