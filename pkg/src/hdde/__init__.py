"""Nonparametric density estimation for trajectories via diffusion maps.

Tracks are resampled to a fixed number of points, embedded with a diffusion
map, modelled with a k-nearest-neighbour kernel density in the embedding,
and simulated by sampling that density and mapping the draws back to tracks.
"""

__version__ = "0.1.0"

from .cde import conditional_densities, fit_series_conditional, fit_series_marginal, split_by_condition
from .density import KNNDensity, fit_knn_kde
from .diffusion import DiffusionModel, build_model, cross_validate, nystrom_extend, nystrom_extend_many
from .pipeline import FittedPipeline, Sampler, fit_pipeline, simulate
from .preimage import PreimageConfig, preimage
from .trackdata import GeneratorSpec, TrackSet, delta_matrix, parse_tracks, read_tracks, regularize, synthesize_tracks
from .validation import nn_statistic, select_dimension, simulated_test

__all__ = [
    "DiffusionModel",
    "FittedPipeline",
    "GeneratorSpec",
    "KNNDensity",
    "PreimageConfig",
    "Sampler",
    "TrackSet",
    "build_model",
    "conditional_densities",
    "cross_validate",
    "delta_matrix",
    "fit_knn_kde",
    "fit_pipeline",
    "fit_series_conditional",
    "fit_series_marginal",
    "nn_statistic",
    "nystrom_extend",
    "nystrom_extend_many",
    "parse_tracks",
    "preimage",
    "read_tracks",
    "regularize",
    "select_dimension",
    "simulate",
    "simulated_test",
    "split_by_condition",
    "synthesize_tracks",
]
