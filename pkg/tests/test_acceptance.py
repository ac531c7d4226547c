"""Acceptance criteria, one test each; outcomes are summarized at the end of the run."""

import hashlib
import time

import numpy as np
import pytest
from conftest import MODEL_AUDIT
from oracles import brute_diffusion_distance_sq, count_configuration, naive_delta
from scipy.spatial.distance import cdist
from scipy.stats import qmc

from hdde.cde import CosineBasis, fit_series_conditional, fit_series_marginal
from hdde.cli import main
from hdde.density import fit_knn_kde
from hdde.diffusion import build_model, cross_validate, default_cv_grid, embed, nystrom_extend_many
from hdde.pipeline import Sampler, fit_pipeline, simulate
from hdde.preimage import PreimageConfig, combine, preimage
from hdde.trackdata import delta_pdist, synthesize_tracks
from hdde.validation import nn_flags, nn_statistic, select_dimension, simulated_test

pytestmark = pytest.mark.acceptance


def median_model(ts, t=1, m=3, n_eigs=None):
    D = delta_pdist(ts)
    eps = float(np.median(D[np.triu_indices(len(ts), 1)] ** 2))
    return build_model(ts, eps, t, m, n_eigs=n_eigs, distances=D)


def euclid(A, B):
    return cdist(A.reshape(len(A), -1), B.reshape(len(B), -1))


class GeneratorSampler:
    def __init__(self, n):
        self.n = n

    def __call__(self, seed):
        return synthesize_tracks(self.n, seed=seed)


def test_01_spectral_identity(record):
    rng = np.random.default_rng(1)
    start, worst = time.perf_counter(), 0.0
    for r in range(50):
        n, t = int(rng.integers(3, 31)), int(rng.integers(1, 4))
        model = median_model(synthesize_tracks(n, seed=100 + r), t=t, m=n - 1)
        lam, psi = model.eigenvalues[1:], model.eigenvectors[:, 1:]
        for i in range(n):
            for j in range(i + 1, n):
                brute = brute_diffusion_distance_sq(model.transition, model.stationary, t, i, j)
                spectral = float(np.sum(lam ** (2 * t) * (psi[i] - psi[j]) ** 2))
                worst = max(worst, abs(spectral - brute) / brute)
    elapsed = time.perf_counter() - start
    record(1, "spectral identity", worst <= 1e-8 and elapsed < 10, f"max rel err {worst:.1e}, {elapsed:.1f} s")


def test_02_nystrom_training_exactness(record):
    start, worst = time.perf_counter(), 0.0
    for r in range(20):
        ts = synthesize_tracks(20 + 4 * r, seed=200 + r)
        model = median_model(ts, t=1 + r % 3, m=2 + r % 3)
        worst = max(worst, float(np.max(np.abs(nystrom_extend_many(model, ts.points) - embed(model)))))
    elapsed = time.perf_counter() - start
    record(2, "Nystrom training exactness", worst <= 1e-8 and elapsed < 5, f"max abs err {worst:.1e}, {elapsed:.1f} s")


def test_03_model_invariants_suite_wide(record):
    # runs last; every model built anywhere in the session was audited
    median_model(synthesize_tracks(30, seed=300))
    ok = MODEL_AUDIT["checked"] > 0 and not MODEL_AUDIT["violations"]
    record(3, "model invariants", ok, f"{MODEL_AUDIT['checked']} models audited, {len(MODEL_AUDIT['violations'])} violations")


def test_04_test_calibration(record):
    start, rejections = time.perf_counter(), 0
    sampler = GeneratorSampler(100)
    for rep in range(100):
        observed = sampler(np.random.SeedSequence([4, rep]))
        rejections += simulated_test(sampler, observed, k=199, seed=rep).rejects(0.05)
    elapsed = time.perf_counter() - start
    ok = 2 <= rejections <= 10 and elapsed < 300
    record(4, "test calibration", ok, f"{rejections}/100 rejections at 0.05, {elapsed:.0f} s")


def test_05_statistic_arithmetic_and_end_to_end(record):
    A, B = count_configuration()
    ell = nn_statistic(A, B, euclid)
    arithmetic = (
        int(nn_flags(A, B, euclid).sum()) == 689
        and ell == 689 / 1216
        and f"{ell:.2f}" == "0.57"
        and np.floor(ell * 100) / 100 == 0.56
    )

    n, ells, nonreject = 300, [], 0
    for seed in range(10):
        ts = synthesize_tracks(n, seed=seed)
        D = delta_pdist(ts)
        eps = float(np.median(D[np.triu_indices(n, 1)] ** 2))
        fitted = fit_pipeline(ts, eps, 1, 3, distances=D)
        report = simulated_test(Sampler(fitted, n), ts, 39, seed=seed)
        ells.append(report.ell_star)
        nonreject += not report.rejects(0.05)
    mean = float(np.mean(ells))
    ok = arithmetic and 0.50 <= mean <= 0.65 and nonreject >= 8
    record(
        5,
        "statistic arithmetic and end-to-end parity",
        ok,
        f"689/1216 = {ell:.4f} ({ell:.2f}); synthetic mean ell* {mean:.3f}, {nonreject}/10 not rejected",
    )


def test_06_dimension_selection(record):
    start, picks = time.perf_counter(), []
    for seed in range(10):
        ts = synthesize_tracks(200, seed=1000 + seed)
        picks.append(select_dimension(ts, (2, 3, 4), sims=15, seed=seed).selected)
    elapsed = time.perf_counter() - start
    hits = picks.count(3)
    record(6, "dimension selection", hits >= 7 and elapsed < 600, f"m=3 in {hits}/10 seeds {picks}, {elapsed:.0f} s")


def test_07_preimage_fidelity(record):
    failures, worst = 0, 0.0
    for seed in range(10):
        ts = synthesize_tracks(100, seed=700 + seed)
        D = delta_pdist(ts)
        model = build_model(ts, float(np.median(D[np.triu_indices(100, 1)] ** 2)), 1, 3, distances=D)
        np.fill_diagonal(D, np.inf)
        mean_nn = D.min(axis=1).mean()
        cfg = PreimageConfig().resolve(model)
        for i, zeta in enumerate(embed(model)):
            ratio = naive_delta(ts.points[i], preimage(zeta, model, cfg).track) / mean_nn
            worst = max(worst, ratio)
            failures += ratio >= 1
    record(7, "pre-image fidelity", failures == 0, f"{failures} of 1000 tracks fail; worst Delta / mean NN Delta {worst:.3f}")


def test_08_stretch_bounds(record):
    rng = np.random.default_rng(8)
    models = [median_model(synthesize_tracks(40, seed=800 + s)) for s in range(5)]
    cfgs = [PreimageConfig().resolve(m) for m in models]
    lo, hi, bad = np.inf, -np.inf, 0
    for call in range(10**4):
        model, cfg = models[call % 5], cfgs[call % 5]
        Z = embed(model)
        zeta = Z[rng.integers(len(Z))] + rng.normal(size=3) * Z.std(axis=0) * rng.uniform(0, 3)
        res = preimage(zeta, model, cfg)
        base = combine(res.weights, model.tracks)
        ratio = np.linalg.norm(res.track[-1] - res.track[0]) / np.linalg.norm(base[-1] - base[0])
        lo, hi = min(lo, ratio), max(hi, ratio)
        bad += not (0.75 - 1e-12 <= ratio <= 1.5 + 1e-12)
    record(8, "stretch-bound compliance", bad == 0, f"10^4 calls, ratio range [{lo:.6f}, {hi:.6f}], {bad} outside")


def test_09_density_normalization(record):
    rng = np.random.default_rng(9)
    integrals = []
    for fit in range(20):
        m = 2 + fit % 2
        pts = rng.normal(size=(int(rng.integers(50, 300)), m)) * rng.uniform(0.2, 3.0, m)
        if fit % 4 == 3:  # a two-cluster shape
            pts[: len(pts) // 2] += 6.0
        est = fit_knn_kde(pts)
        h = est.bandwidths[:, None]
        box_lo, box_hi = (est.points - 5 * h).min(axis=0), (est.points + 5 * h).max(axis=0)
        u = qmc.scale(qmc.Sobol(m, seed=fit).random_base2(20), box_lo, box_hi)  # 2^20 ~ 10^6 draws
        integrals.append(float(np.prod(box_hi - box_lo) * est.evaluate(u).mean()))
    worst = float(np.max(np.abs(np.array(integrals) - 1)))
    record(9, "density normalization", worst <= 0.02, f"20 fits, max |integral - 1| = {worst:.1e}")


def test_10_series_estimators(record):
    rng = np.random.default_rng(10)
    z = rng.uniform(size=20000)
    z = z[rng.uniform(size=z.size) * 1.5 < 1 + 0.5 * np.cos(2 * np.pi * z)][:5000]
    est = fit_series_marginal(z, CosineBasis(0.0, 1.0), cutoff=10)
    grid = np.linspace(0, 1, 4001)
    ise = float(np.trapezoid((est(grid) - (1 + 0.5 * np.cos(2 * np.pi * grid))) ** 2, grid))

    # unit-length predictor support: the cross coefficients' spread grows with its square root
    n = 10**4
    x, y = rng.uniform(0.0, 1.0, n), rng.uniform(0.0, 1.0, n)
    cond = fit_series_conditional(x, CosineBasis(0.0, 1.0)(y, 5), CosineBasis(0.0, 1.0), cutoff=5)
    cross = float(np.max(np.abs(cond.coef[1:, :])))
    ok = len(z) == 5000 and ise < 0.01 and cross < 5 / np.sqrt(n)
    record(10, "series estimators", ok, f"ISE {ise:.1e}; max cross |theta| {cross:.4f} vs bound {5 / np.sqrt(n):.4f}")


def test_11_cli_reproducibility(record, tmp_path):
    (tmp_path / "run.ini").write_text(
        "[synth]\nn = 60\n[input]\npath = data/tracks.csv\nyears = data/years.csv\n"
        "[condition]\nseries = data/condition.csv\ncount = 10\n[validation]\nk = 5\n[density]\ngrid_points = 8\n"
    )
    cfg = str(tmp_path / "run.ini")
    main(["synth", "--config", cfg, "--out", str(tmp_path / "data"), "--seed", "3"])

    def digest(out, jobs):
        codes = [
            main([cmd, "--config", cfg, "--out", str(out), "--seed", "7", "--jobs", str(jobs)])
            for cmd in ("embed", "fit", "simulate", "validate", "cde")
        ]
        files = sorted(p for p in out.iterdir())
        return codes, {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in files}

    codes_a, a = digest(tmp_path / "a", 1)
    codes_b, b = digest(tmp_path / "b", 2)
    ok = codes_a == codes_b == [0] * 5 and a == b and len(a) >= 8
    record(11, "CLI reproducibility", ok, f"{len(a)} output files, identical hashes: {a == b}")


def test_12_desk_scale_performance(record):
    start = time.perf_counter()
    ts = synthesize_tracks(608, seed=12)
    D = delta_pdist(ts)
    heldout = np.sort(np.random.default_rng(12).choice(608, 60, replace=False))
    cv = cross_validate(ts, default_cv_grid(D, ts=(1,)), 3, PreimageConfig(), heldout=heldout, distances=D)
    fitted = fit_pipeline(ts, cv.best[0], cv.best[1], 3, distances=D)
    sims, _ = simulate(fitted, 608, seed=12)
    report = simulated_test(Sampler(fitted, 608), ts, 1, seed=12)
    elapsed = time.perf_counter() - start
    ok = elapsed < 60 and len(sims) == 608 and fitted.density.k == 25
    record(12, "desk-scale performance", ok, f"n=608 cv + fit + simulate + one validation round in {elapsed:.1f} s, ell* {report.ell_star:.3f}")
