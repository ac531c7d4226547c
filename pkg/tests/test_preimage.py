import itertools
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import naive_delta, naive_extension_row, naive_softmax_weights

from hdde.diffusion import build_model, embed, nystrom_extend_many
from hdde.errors import IllConditionedExtensionError, InputError, NumericalError
from hdde.preimage import (
    DEFAULT_STRETCHES,
    PreimageConfig,
    candidate_tracks,
    combine,
    default_sigmas,
    preimage,
    weights,
)
from hdde.trackdata import TrackSet, delta_pdist, synthesize_tracks


@pytest.fixture(scope="module")
def model():
    ts = synthesize_tracks(40, seed=21)
    D = delta_pdist(ts)
    return build_model(ts, float(np.median(D[np.triu_indices(40, 1)] ** 2)), 1, 3, distances=D)


def naive_objective(zeta, track, model):
    row = naive_extension_row(track, model.tracks.points, model.epsilon)
    lam = model.eigenvalues[1 : model.m + 1]
    coords = row @ model.eigenvectors[:, 1 : model.m + 1] * lam ** (model.t - 1)
    return float(np.sum((coords - zeta) ** 2))


def test_grid_defaults():
    assert len(DEFAULT_STRETCHES) == 16
    assert DEFAULT_STRETCHES[0] == 0.75 and DEFAULT_STRETCHES[-1] == 1.5
    np.testing.assert_allclose(np.diff(DEFAULT_STRETCHES), 0.05)


def test_default_sigmas(model):
    sig = default_sigmas(model.embedding)
    d2 = np.sum((model.embedding[:, None] - model.embedding[None]) ** 2, axis=2)[np.triu_indices(40, 1)]
    q25, q75 = np.percentile(d2, [25, 75])
    assert len(sig) == 10 and sig[0] == 0.0
    sig = sig[1:]
    assert sig[0] == pytest.approx(0.1 * q25) and sig[-1] == pytest.approx(10 * q75)
    np.testing.assert_allclose(np.diff(np.log(sig)), np.log(sig[1] / sig[0]))


@pytest.mark.parametrize(
    "kwargs",
    [
        {"stretches": (0.7,)},
        {"stretches": (1.6,)},
        {"stretches": ()},
        {"sigmas": ()},
        {"sigmas": (1.0, -1.0)},
        {"sigmas": (float("nan"),)},
        {"anchors": ("middle",)},
        {"anchors": ()},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(InputError):
        PreimageConfig(**kwargs)


# --------------------------------------------------------------------------
# weights


def test_single_track_weight():
    np.testing.assert_array_equal(weights([0.3, -1.0], np.array([[5.0, 5.0]]), 0.1), [1.0])


def test_concentration_on_small_sigma(model):
    Z = model.embedding
    d2 = np.sum((Z[:, None] - Z[None]) ** 2, axis=2)
    tiny = d2[d2 > 0].min() / 100
    for i in (0, 17, 39):
        assert weights(Z[i], Z, tiny)[i] > 1 - 1e-6


def test_weights_match_direct_formula(model, rng):
    Z = model.embedding
    sigma = float(np.median(np.sum((Z[:, None] - Z[None]) ** 2, axis=2)))
    for _ in range(5):
        zeta = rng.normal(size=3) * Z.std(axis=0)
        np.testing.assert_allclose(weights(zeta, Z, sigma), naive_softmax_weights(zeta, Z, sigma), rtol=1e-12, atol=1e-300)


def test_zero_sigma_is_the_limit(model, rng):
    cfg = PreimageConfig(sigmas=(0.0,), stretches=(1.0,), anchors=("origination",))
    zeta = rng.normal(size=3) * embed(model).std(axis=0)
    nearest = int(np.argmin(np.sum((embed(model) - zeta) ** 2, axis=1)))
    res = preimage(zeta, model, cfg)
    np.testing.assert_array_equal(res.track, model.tracks.points[nearest])
    assert res.weights[nearest] == 1.0 and res.sigma == 0.0


def test_weight_errors():
    with pytest.raises(InputError):
        weights([0.0], np.zeros((3, 1)), 0.0)
    with pytest.raises(NumericalError):
        weights([0.0], np.full((3, 1), np.inf), 1.0)


@settings(max_examples=40)
@given(st.integers(0, 10**6), st.floats(1e-6, 1e6))
def test_weights_on_simplex(seed, sigma):
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(20, 3)) * 10
    w = weights(rng.normal(size=3) * 30, Z, sigma)
    assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-12


# --------------------------------------------------------------------------
# combine


def test_one_hot_returns_track(model):
    w = np.zeros(40)
    w[5] = 1.0
    np.testing.assert_array_equal(combine(w, model.tracks), model.tracks.points[5])


def test_midpoint_of_parallel_tracks():
    a = np.c_[np.linspace(0, 12, 13), np.zeros(13)]
    ts = TrackSet(("a", "b"), np.stack([a, a + [0.0, 2.0]]))
    np.testing.assert_allclose(combine([0.5, 0.5], ts), a + [0.0, 1.0])


@pytest.mark.parametrize("anchor, fixed, moved", [("origination", 0, -1), ("lysis", -1, 0)])
def test_stretch_about_anchor(model, anchor, fixed, moved):
    w = np.full(40, 1 / 40)
    base = combine(w, model.tracks)
    out = combine(w, model.tracks, 1.5, anchor)
    np.testing.assert_allclose(out[fixed], base[fixed], atol=1e-12)
    assert np.linalg.norm(out[moved] - out[fixed]) == pytest.approx(1.5 * np.linalg.norm(base[moved] - base[fixed]))


# --------------------------------------------------------------------------
# pre-image search


def test_training_point_is_recovered(model):
    X = model.tracks.points
    D = delta_pdist(model.tracks)
    np.fill_diagonal(D, np.inf)
    mean_nn = D.min(axis=1).mean()
    for i in (0, 11, 29):
        zeta = embed(model)[i]
        res = preimage(zeta, model)
        assert res.objective <= naive_objective(zeta, X[i], model) + 1e-20
        assert naive_delta(X[i], res.track) < mean_nn


def test_singleton_grid_is_plain_combination(model, rng):
    zeta = rng.normal(size=3) * embed(model).std(axis=0)
    cfg = PreimageConfig(sigmas=(0.05,), stretches=(1.0,), anchors=("origination",), truncate=0.0)
    res = preimage(zeta, model, cfg)
    expect = combine(weights(zeta, embed(model), 0.05), model.tracks, 1.0, "origination")
    np.testing.assert_allclose(res.track, expect, rtol=1e-14, atol=1e-12)
    assert (res.sigma, res.stretch, res.anchor) == (0.05, 1.0, "origination")


def test_exhaustive_grid_oracle(model, rng):
    cfg = PreimageConfig(sigmas=(0.003, 0.03, 0.3), stretches=(0.75, 1.0, 1.3), truncate=0.0)
    Z = embed(model)
    for _ in range(3):
        zeta = Z[rng.integers(40)] + rng.normal(size=3) * 0.3 * Z.std(axis=0)
        best = min(
            naive_objective(zeta, combine(naive_softmax_weights(zeta, Z, s), model.tracks, f, a), model)
            for s, f, a in itertools.product(cfg.sigmas, cfg.stretches, cfg.anchors)
        )
        assert preimage(zeta, model, cfg).objective == pytest.approx(best, rel=1e-9, abs=1e-15)


def test_anchor_tie_goes_to_origination(model):
    cfg = PreimageConfig(sigmas=(0.1,), stretches=(1.0,), anchors=("lysis", "origination"))
    assert preimage(embed(model)[3], model, cfg).anchor == "origination"


def test_extension_errors_propagate(model):
    lam = model.eigenvalues.copy()
    lam[1] = 0.0
    broken = replace(model, eigenvalues=lam)
    with pytest.raises(IllConditionedExtensionError):
        preimage(np.zeros(3), broken, PreimageConfig(sigmas=(1.0,)))


@settings(max_examples=25)
@given(st.integers(0, 10**6))
def test_result_invariants(model, seed):
    rng = np.random.default_rng(seed)
    Z = embed(model)
    zeta = Z[rng.integers(40)] + rng.normal(size=3) * Z.std(axis=0) * rng.uniform(0, 2)
    cfg = PreimageConfig().resolve(model)
    res = preimage(zeta, model, cfg)
    assert res.track.shape == (13, 2)
    assert np.all(res.weights >= 0) and abs(res.weights.sum() - 1) <= 1e-12
    assert res.objective >= 0
    assert res.stretch in cfg.stretches and res.sigma in cfg.sigmas

    cands, _, _ = candidate_tracks(zeta, model, cfg)
    objs = np.sum((nystrom_extend_many(model, cands) - zeta) ** 2, axis=1)
    assert res.objective <= objs.min() + 1e-15

    base = combine(res.weights, model.tracks)
    ratio = np.linalg.norm(res.track[-1] - res.track[0]) / np.linalg.norm(base[-1] - base[0])
    assert 0.75 - 1e-12 <= ratio <= 1.5 + 1e-12

    X = model.tracks.points.reshape(-1, 2)
    lo, hi = X.min(axis=0), X.max(axis=0)
    assert np.all(base >= lo - 1e-9) and np.all(base <= hi + 1e-9)
    half = 0.5 * (hi - lo)
    assert np.all(res.track >= lo - half - 1e-9) and np.all(res.track <= hi + half + 1e-9)


def test_candidate_order_is_canonical(model):
    cfg = PreimageConfig(sigmas=(0.1, 1.0), stretches=(0.75, 1.0))
    cands, ws, keys = candidate_tracks(embed(model)[0], model, cfg)
    assert len(cands) == len(keys) == 8 and len(ws) == 2
    assert keys[:4] == [(0, 0.75, "origination"), (0, 1.0, "origination"), (0, 0.75, "lysis"), (0, 1.0, "lysis")]
