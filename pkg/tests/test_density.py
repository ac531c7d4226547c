import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import naive_kde
from scipy.spatial.distance import cdist
from scipy.stats import norm, qmc

from hdde.density import default_k, density_grid, fit_knn_kde, write_density_grid
from hdde.errors import DimensionError, InputError, ZeroBandwidthError
from hdde.validation import simulated_test


def euclid(A, B):
    return cdist(A, B)


def test_two_points_one_neighbour():
    est = fit_knn_kde(np.array([[0.0], [1.0]]), k=1)
    np.testing.assert_array_equal(est.bandwidths, [1.0, 1.0])
    assert est.n == 2 and est.m == 1


def test_default_k():
    assert default_k(100) == 10 and default_k(608) == 25 and default_k(1) == 1
    assert fit_knn_kde(np.random.default_rng(0).normal(size=(50, 2))).k == 7


def test_bandwidth_is_kth_neighbour(rng):
    pts = rng.normal(size=(40, 3))
    est = fit_knn_kde(pts, k=5)
    D = cdist(pts, pts)
    np.fill_diagonal(D, np.inf)
    np.testing.assert_allclose(est.bandwidths, np.sort(D, axis=1)[:, 4], rtol=1e-12)


def test_coincident_points_are_named():
    pts = np.array([[0.0, 0.0], [1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [3.0, 0.0]])
    with pytest.raises(ZeroBandwidthError, match=r"\[1, 2, 3\]"):
        fit_knn_kde(pts, k=2)
    # k coincident points are fine, the k-th neighbour lies outside the clump
    assert np.all(fit_knn_kde(pts, k=3).bandwidths > 0)


def test_fit_preconditions():
    with pytest.raises(InputError):
        fit_knn_kde(np.zeros((3, 2)) + np.arange(3)[:, None], k=3)
    with pytest.raises(InputError):
        fit_knn_kde(np.arange(5.0), k=0)


def test_positive_at_training_points(rng):
    est = fit_knn_kde(rng.normal(size=(30, 2)))
    assert np.all(est.evaluate(est.points) > 0)


def test_symmetric_pair_midpoint():
    est = fit_knn_kde(np.array([[-1.0, 0.0], [1.0, 0.0]]), k=1)
    # both components contribute N(1; 0, 4) in x and N(0; 0, 4) in y
    expect = norm.pdf(1.0, scale=2.0) * norm.pdf(0.0, scale=2.0)
    assert est.evaluate([0.0, 0.0]) == pytest.approx(expect, rel=1e-14)


def test_far_field(rng):
    est = fit_knn_kde(rng.normal(size=(30, 3)))
    assert est.evaluate([1e3, 0.0, 0.0]) < 1e-12


def test_grid_matches_direct_sum(rng):
    est = fit_knn_kde(rng.normal(size=(25, 2)) * [1.0, 3.0], k=4)
    grid, values = density_grid(est, points_per_axis=9)
    assert grid.shape == (81, 2)
    ref = [naive_kde(z, est.points, est.bandwidths) for z in grid]
    np.testing.assert_allclose(values, ref, rtol=1e-12, atol=0)


def test_dimension_mismatch(rng):
    est = fit_knn_kde(rng.normal(size=(10, 2)))
    with pytest.raises(DimensionError):
        est.evaluate([0.0, 0.0, 0.0])


def test_grid_export(tmp_path, rng):
    est = fit_knn_kde(rng.normal(size=(10, 3)))
    grid, values = density_grid(est, points_per_axis=3)
    write_density_grid(tmp_path / "g.csv", grid, values)
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "d1,d2,d3,density" and len(lines) == 28
    assert float(lines[5].split(",")[-1]) == values[4]


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_uniform_box_normalization(seed):
    rng = np.random.default_rng(seed)
    est = fit_knn_kde(rng.normal(size=(200, 3)) * rng.uniform(0.5, 2.0, 3))
    h = est.bandwidths[:, None]
    lo, hi = (est.points - 5 * h).min(axis=0), (est.points + 5 * h).max(axis=0)
    # 2**20 scrambled Sobol points, uniform over the box
    u = qmc.scale(qmc.Sobol(3, seed=seed).random_base2(20), lo, hi)
    assert np.prod(hi - lo) * est.evaluate(u).mean() == pytest.approx(1.0, abs=0.02)


def test_sampling_is_deterministic(rng):
    est = fit_knn_kde(rng.normal(size=(30, 2)))
    np.testing.assert_array_equal(est.sample(50, seed=3), est.sample(50, seed=3))
    assert not np.array_equal(est.sample(50, seed=3), est.sample(50, seed=4))
    with pytest.raises(InputError):
        est.sample(0, seed=1)


@settings(max_examples=20)
@given(st.integers(0, 10**6), st.floats(0.01, 100.0))
def test_scaling_equivariance(seed, c):
    pts = np.random.default_rng(seed).normal(size=(20, 2))
    a, b = fit_knn_kde(pts), fit_knn_kde(c * pts)
    np.testing.assert_allclose(b.bandwidths, c * a.bandwidths, rtol=1e-12)
    np.testing.assert_allclose(b.sample(15, seed), c * a.sample(15, seed), rtol=1e-12, atol=1e-12 * c)


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.lists(st.floats(-50, 50), min_size=2, max_size=2))
def test_evaluate_finite_and_continuous(seed, z):
    est = fit_knn_kde(np.random.default_rng(seed).normal(size=(15, 2)))
    z = np.array(z)
    v = est.evaluate(z)
    assert np.isfinite(v) and v >= 0
    assert abs(est.evaluate(z + 1e-9) - v) <= 1e-6 * max(v, 1e-300) + 1e-12


def test_histogram_matches_cell_mass():
    rng = np.random.default_rng(7)
    est = fit_knn_kde(rng.normal(size=(60, 2)) * [1.0, 0.5])
    draws = est.sample(10**5, seed=11)
    edges = [np.r_[-np.inf, np.linspace(-2, 2, 5), np.inf], np.r_[-np.inf, np.linspace(-1, 1, 5), np.inf]]
    counts, _, _ = np.histogram2d(draws[:, 0], draws[:, 1], bins=edges)
    # exact cell mass of the Gaussian mixture: products of normal CDF differences
    px = np.diff(norm.cdf((edges[0][None, :] - est.points[:, :1]) / est.bandwidths[:, None]), axis=1)
    py = np.diff(norm.cdf((edges[1][None, :] - est.points[:, 1:]) / est.bandwidths[:, None]), axis=1)
    mass = np.einsum("ia,ib->ab", px, py) / est.n
    assert mass.sum() == pytest.approx(1.0, abs=1e-12)
    expect = 10**5 * mass
    sd = np.sqrt(10**5 * mass * (1 - mass))
    assert np.all(np.abs(counts - expect) <= 3 * sd + 1e-9)


def test_independent_samples_pass_the_nn_test():
    rng = np.random.default_rng(5)
    est = fit_knn_kde(rng.normal(size=(200, 3)))
    rejections = 0
    for rep in range(100):
        observed = est.sample(500, seed=(rep, 0))
        report = simulated_test(lambda s: est.sample(500, s), observed, k=19, seed=rep, metric=euclid)
        rejections += report.rejects(0.05)
    assert rejections <= 10
