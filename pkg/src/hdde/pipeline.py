"""End-to-end simulation: embed, estimate a density, sample, invert."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .density import KNNDensity, fit_knn_kde
from .diffusion import DiffusionModel, build_model, cross_validate, nystrom_extend_many
from .preimage import PreimageConfig, preimage
from .trackdata import TrackSet

__all__ = ["FittedPipeline", "Sampler", "fit_pipeline", "simulate", "select_parameters"]


@dataclass(frozen=True, eq=False)
class FittedPipeline:
    model: DiffusionModel
    density: KNNDensity
    preimage_config: PreimageConfig = field(repr=False)

    @property
    def n(self) -> int:
        return self.model.n


def fit_pipeline(
    tracks: TrackSet,
    epsilon: float,
    t: int = 1,
    m: int = 3,
    k: int | None = None,
    preimage_config: PreimageConfig | None = None,
    distances: np.ndarray | None = None,
) -> FittedPipeline:
    """Build the diffusion map and fit the kNN density to the embedded tracks."""
    model = build_model(tracks, epsilon, t, m, distances=distances)
    density = fit_knn_kde(model.embedding, k)
    config = (preimage_config or PreimageConfig()).resolve(model)
    return FittedPipeline(model, density, config)


def simulate(fitted: FittedPipeline, count: int, seed=None, prefix: str = "sim"):
    """Draw ``count`` diffusion-space points and map each back to a track.

    Returns ``(tracks, zetas)``: the simulated :class:`TrackSet` and the
    sampled diffusion coordinates it was inverted from.
    """
    zetas = fitted.density.sample(count, seed)
    X = np.stack([preimage(z, fitted.model, fitted.preimage_config).track for z in zetas])
    width = max(4, len(str(count - 1)))
    ids = tuple(f"{prefix}{i:0{width}d}" for i in range(count))
    return TrackSet(ids, X), zetas


@dataclass(frozen=True, eq=False)
class Sampler:
    """Picklable callable producing simulated track sets of a fixed size."""

    fitted: FittedPipeline
    size: int

    def __call__(self, seed) -> TrackSet:
        return simulate(self.fitted, self.size, seed)[0]

    def embed(self, tracks: TrackSet) -> np.ndarray:
        return nystrom_extend_many(self.fitted.model, tracks.points)


def select_parameters(tracks, grid=None, m=3, preimage_config=None, heldout=None, jobs=1, distances=None):
    """Cross-validate ``(epsilon, t)``; thin wrapper kept for the CLI."""
    return cross_validate(tracks, grid, m, preimage_config, heldout=heldout, jobs=jobs, distances=distances)
