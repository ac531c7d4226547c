"""Command-line entry point: ``hdde <command> [--config FILE] [--seed N] ...``.

Each command reads the configuration, writes its outputs into the output
directory and finishes with ``manifest.json`` listing the effective
parameters and a hash of every file written.  Outputs depend only on the
configuration, the input files and the seed.

Exit codes: 0 success, 1 validation rejected (with ``--fail-on-reject``),
2 input error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cde import (
    conditional_densities,
    diffusion_basis,
    fit_series_conditional,
    read_condition_series,
    read_sst_field,
    region_tracks,
    split_by_condition,
    sst_over_track,
    write_condition_series,
)
from .config import PipelineConfig, load_config, render_template
from .density import default_k, density_grid, write_density_grid
from .diffusion import build_model, cross_validate, default_cv_grid, nystrom_extend_many
from .errors import HDDEError, InputError, NumericalError, SamplerError
from .pipeline import Sampler, fit_pipeline, simulate
from .preimage import PreimageConfig
from .trackdata import GeneratorSpec, TrackSet, delta_pdist, read_tracks, synthesize_tracks, write_tracks_csv, write_years_csv
from .validation import assessment_rows, select_dimension, simulated_test, write_assessment

EXIT_OK, EXIT_REJECT, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3
MAX_GRID_DIM = 3


class Run:
    """Output directory, effective settings and the files written so far."""

    def __init__(self, command: str, cfg: PipelineConfig, args):
        self.command = command
        self.seed = cfg.run.seed if args.seed is None else args.seed
        self.jobs = cfg.run.jobs if args.jobs is None else args.jobs
        self.cfg = replace(cfg, run=replace(cfg.run, seed=self.seed, jobs=self.jobs))
        self.out = Path(args.out) if args.out is not None else cfg.resolve_path(cfg.run.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.fail_on_reject = bool(getattr(args, "fail_on_reject", False))
        self.outputs: list[str] = []
        self.params: dict = {}
        self.input_hash: str | None = None

    def path(self, name: str) -> Path:
        self.outputs.append(name)
        return self.out / name

    def write_json(self, name: str, obj) -> None:
        with open(self.path(name), "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finish(self) -> None:
        hashes = {name: hashlib.sha256((self.out / name).read_bytes()).hexdigest() for name in self.outputs}
        manifest = {
            "command": self.command,
            "version": __version__,
            "config_sha256": self.cfg.sha256(),
            "input_sha256": self.input_hash,
            "seed": self.seed,
            "parameters": self.params,
            "outputs": hashes,
        }
        with open(self.out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


# --------------------------------------------------------------------------
# shared stages


def _load_tracks(run: Run) -> TrackSet:
    c = run.cfg.input
    path = run.cfg.resolve_path(c.path)
    if path is None:
        raise InputError("no input path configured ([input] path)")
    years = run.cfg.resolve_path(c.years)
    tracks = read_tracks(path, c.format, c.p, years, c.skip_short)
    if len(tracks) == 0:
        raise InputError(f"no tracks in {path}")
    if c.lon_scale:
        tracks = tracks.scaled_longitude(float(np.cos(np.radians(tracks.mean_latitude()))))
    run.input_hash = tracks.content_hash()
    run.params["input"] = {"n": len(tracks), "p": tracks.p, "format": c.format}
    return tracks


def _preimage_config(cfg: PipelineConfig) -> PreimageConfig:
    c = cfg.preimage
    return PreimageConfig(c.sigmas, c.stretches, c.anchors, c.truncate)


def _heldout(run: Run, n: int):
    h = run.cfg.diffusion.cv_heldout
    if h <= 0 or h >= n:
        return None
    return np.sort(np.random.default_rng(run.seed).choice(n, h, replace=False))


def _cv(run: Run, tracks: TrackSet, D: np.ndarray, m: int):
    c = run.cfg.diffusion
    if c.cv_epsilons:
        grid = [(e, t) for e in c.cv_epsilons for t in c.cv_ts]
    else:
        grid = default_cv_grid(D, ts=c.cv_ts)
    return cross_validate(
        tracks, grid, m, _preimage_config(run.cfg), heldout=_heldout(run, len(tracks)), jobs=run.jobs, distances=D
    )


def _scale(run: Run, tracks: TrackSet, D: np.ndarray, m: int):
    """Resolve ``(epsilon, t)`` from the config; returns the cv result when one ran."""
    c = run.cfg.diffusion
    result = None
    if c.epsilon == "median":
        n = len(tracks)
        eps, t = float(np.median(D[np.triu_indices(n, 1)] ** 2)), c.t
    elif c.epsilon == "cv":
        result = _cv(run, tracks, D, m)
        eps, t = result.best
    else:
        eps, t = float(c.epsilon), c.t
    run.params["diffusion"] = {"epsilon": eps, "t": int(t), "m": int(m), "rule": c.epsilon}
    return eps, t, result


def _effective_m(run: Run, n: int) -> int:
    m = run.cfg.diffusion.m
    if m > n - 1:
        warnings.warn(f"m = {m} exceeds n - 1 = {n - 1}; using m = {n - 1}")
        m = n - 1
    return m


def _fit(run: Run, tracks: TrackSet):
    D = delta_pdist(tracks)
    m = _effective_m(run, len(tracks))
    eps, t, cv = _scale(run, tracks, D, m)
    fitted = fit_pipeline(tracks, eps, t, m, run.cfg.density.k, _preimage_config(run.cfg), distances=D)
    run.params["density"] = {"k": int(fitted.density.k)}
    run.params["preimage"] = {
        "sigmas": list(fitted.preimage_config.sigmas),
        "stretches": list(fitted.preimage_config.stretches),
        "anchors": list(fitted.preimage_config.anchors),
        "truncate": fitted.preimage_config.truncate,
    }
    return fitted, cv


def _write_coords(path: Path, ids, coords: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + [f"d{j + 1}" for j in range(coords.shape[1])])
        for tid, row in zip(ids, coords):
            w.writerow([tid] + [repr(float(v)) for v in row])


def _cv_outputs(run: Run, result, ids) -> None:
    run.write_json("cv.json", result.to_dict())
    with open(run.path("cv_errors.csv"), "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epsilon", "t", "id", "error"])
        for (eps, t), row in zip(result.candidates, result.errors):
            for i, err in zip(result.heldout, row):
                w.writerow([repr(float(eps)), int(t), ids[i], repr(float(err))])


# --------------------------------------------------------------------------
# commands


def cmd_init(args) -> int:
    target = Path(args.path)
    if target.exists() and not args.force:
        raise InputError(f"{target} exists; pass --force to overwrite")
    target.write_text(render_template(), encoding="utf-8")
    print(target)
    return EXIT_OK


def cmd_synth(run: Run) -> int:
    c = run.cfg.synth
    spec = GeneratorSpec(
        center_lon=tuple(c.center_lon),
        center_lat=tuple(c.center_lat),
        heading=tuple(c.heading),
        curvature=tuple(c.curvature),
        length=c.length,
        jitter=c.jitter,
        latent=c.latent,
        p=run.cfg.input.p,
        years=(c.years[0], c.years[-1]),
    )
    tracks = synthesize_tracks(c.n, spec, seed=run.seed)
    run.input_hash = tracks.content_hash()
    # a toy conditioning series: yearly mean latitude of that year's tracks plus noise
    rng = np.random.default_rng([run.seed, 1])
    years = np.asarray(tracks.years)
    lat = tracks.points[:, :, 1].mean(axis=1)
    series = {}
    for y in range(spec.years[0], spec.years[1] + 1):
        sel = years == y
        base = lat[sel].mean() if sel.any() else lat.mean()
        series[y] = float(base + 0.5 * rng.standard_normal())
    write_tracks_csv(tracks, run.path("tracks.csv"))
    write_years_csv(tracks, run.path("years.csv"))
    write_condition_series(run.path("condition.csv"), series)
    run.params["synth"] = {"n": c.n, "latent": c.latent, "latent_dim": spec.latent_dim}
    run.finish()
    return EXIT_OK


def cmd_embed(run: Run) -> int:
    tracks = _load_tracks(run)
    D = delta_pdist(tracks)
    m = _effective_m(run, len(tracks))
    eps, t, cv = _scale(run, tracks, D, m)
    model = build_model(tracks, eps, t, m, distances=D)
    _write_coords(run.path("embedding.csv"), tracks.ids, model.embedding)
    run.write_json("model.json", model.to_dict())
    if cv is not None:
        _cv_outputs(run, cv, tracks.ids)
    run.finish()
    return EXIT_OK


def cmd_cv(run: Run) -> int:
    tracks = _load_tracks(run)
    D = delta_pdist(tracks)
    m = _effective_m(run, len(tracks))
    result = _cv(run, tracks, D, m)
    eps, t = result.best
    run.params["diffusion"] = {"epsilon": float(eps), "t": int(t), "m": int(m), "rule": "cv"}
    _cv_outputs(run, result, tracks.ids)
    run.finish()
    print(f"epsilon={eps!r} t={t}")
    return EXIT_OK


def cmd_dim(run: Run) -> int:
    tracks = _load_tracks(run)
    D = delta_pdist(tracks)
    eps, t, _ = _scale(run, tracks, D, run.cfg.diffusion.m)
    v = run.cfg.validation
    result = select_dimension(
        tracks, v.dim_candidates, v.dim_sims, eps, t, run.cfg.density.k, _preimage_config(run.cfg), seed=run.seed
    )
    run.params["dim"] = {"candidates": list(v.dim_candidates), "sims": v.dim_sims}
    run.write_json("dim.json", result.to_dict())
    run.finish()
    print(f"m={result.selected}")
    return EXIT_OK


def cmd_fit(run: Run) -> int:
    tracks = _load_tracks(run)
    fitted, cv = _fit(run, tracks)
    model = fitted.model
    _write_coords(run.path("embedding.csv"), tracks.ids, model.embedding)
    run.write_json("model.json", model.to_dict())
    est = fitted.density
    run.write_json(
        "density.json",
        {"k": int(est.k), "n": int(est.n), "m": int(est.m), "bandwidths": [float(h) for h in est.bandwidths]},
    )
    if est.m <= MAX_GRID_DIM:
        grid, values = density_grid(est, run.cfg.density.grid_points)
        write_density_grid(run.path("density_grid.csv"), grid, values)
    if cv is not None:
        _cv_outputs(run, cv, tracks.ids)
    run.finish()
    return EXIT_OK


def cmd_simulate(run: Run) -> int:
    tracks = _load_tracks(run)
    fitted, _ = _fit(run, tracks)
    count = run.cfg.simulate.count or len(tracks)
    sims, zetas = simulate(fitted, count, run.seed)
    write_tracks_csv(sims, run.path("simulated.csv"))
    _write_coords(run.path("sampled_coordinates.csv"), sims.ids, zetas)
    run.params["simulate"] = {"count": int(count)}
    run.finish()
    return EXIT_OK


def cmd_validate(run: Run) -> int:
    tracks = _load_tracks(run)
    fitted, _ = _fit(run, tracks)
    v = run.cfg.validation
    report = simulated_test(Sampler(fitted, len(tracks)), tracks, v.k, seed=run.seed, jobs=run.jobs)
    emb = dict(zip(tracks.ids, fitted.model.embedding))
    emb.update(zip(report.simulated.ids, nystrom_extend_many(fitted.model, report.simulated.points)))
    out = report.to_dict()
    out["alpha"] = v.alpha
    out["rejected"] = bool(report.rejects(v.alpha))
    run.write_json("validation.json", out)
    write_assessment(run.path("assessment.csv"), assessment_rows(report, emb))
    run.params["validation"] = {"k": v.k, "alpha": v.alpha}
    run.finish()
    print(f"ell_star={report.ell_star:.2f} p={report.p_value:.3f}")
    if run.fail_on_reject and report.rejects(v.alpha):
        return EXIT_REJECT
    return EXIT_OK


def cmd_cde(run: Run) -> int:
    tracks = _load_tracks(run)
    c = run.cfg.condition
    if tracks.years is None:
        raise InputError("conditional analysis needs track years ([input] years)")
    series_path = run.cfg.resolve_path(c.series)
    if series_path is None:
        raise InputError("no condition series configured ([condition] series)")
    split = split_by_condition(tracks, read_condition_series(series_path), c.count)
    D = delta_pdist(tracks)
    m = _effective_m(run, len(tracks))
    eps, t, _ = _scale(run, tracks, D, m)
    k = run.cfg.density.k
    if k is None:
        k = default_k(min(len(split.hot_index), len(split.cold_index)))
    cd = conditional_densities(tracks, split, eps, t, m, k, distances=D)

    box = c.region[:m]
    report = cd.summary()
    report["region"] = {
        "box": [list(b) for b in box],
        "ids": region_tracks(cd.model, box),
        "hot_ids": region_tracks(cd.model, box, split.hot_index),
        "cold_ids": region_tracks(cd.model, box, split.cold_index),
    }
    if m <= MAX_GRID_DIM:
        emb = cd.model.embedding
        lo, hi = emb.min(axis=0), emb.max(axis=0)
        span = np.where(hi > lo, hi - lo, 1.0)
        grid, hot = density_grid(cd.hot, run.cfg.density.grid_points, bounds=list(zip(lo - 0.1 * span, hi + 0.1 * span)))
        cold = cd.cold.evaluate(grid)
        with open(run.path("conditional_grid.csv"), "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([f"d{j + 1}" for j in range(m)] + ["hot", "cold", "difference"])
            for row, a, b in zip(grid, hot, cold):
                w.writerow([repr(float(x)) for x in row] + [repr(float(a)), repr(float(b)), repr(float(a - b))])

    sst_path = run.cfg.resolve_path(c.sst)
    if sst_path is not None:
        field = read_sst_field(sst_path)
        x = np.array([sst_over_track(field, pts, year) for pts, year in zip(tracks.points, tracks.years)])
        est = fit_series_conditional(x, diffusion_basis(cd.model, c.cutoff_y), cutoff=c.cutoff_x)
        report["series"] = est.to_dict()
        report["series"]["predictor_values"] = [float(v) for v in x]
    run.params["condition"] = {"count": c.count, "k": int(k)}
    run.write_json("conditional.json", report)
    run.finish()
    return EXIT_OK


COMMANDS = {
    "synth": (cmd_synth, "generate synthetic tracks, years and a condition series"),
    "embed": (cmd_embed, "build the diffusion map and write coordinates"),
    "cv": (cmd_cv, "cross-validate epsilon and t"),
    "dim": (cmd_dim, "choose the embedding dimension by simulation"),
    "fit": (cmd_fit, "fit the map and the density; write a density grid"),
    "simulate": (cmd_simulate, "simulate tracks from the fitted density"),
    "validate": (cmd_validate, "two-sample nearest-neighbour test of the simulator"),
    "cde": (cmd_cde, "hot/cold conditional densities and series estimate"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hdde", description="Track density estimation in diffusion space.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="write a config template")
    p.add_argument("path", nargs="?", default="hdde.ini")
    p.add_argument("--force", action="store_true")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file (defaults apply when omitted)")
    common.add_argument("--seed", type=int, help="overrides [run] seed")
    common.add_argument("--jobs", type=int, help="overrides [run] jobs")
    common.add_argument("--out", help="overrides [run] out")
    common.add_argument("--fail-on-reject", action="store_true", help="exit 1 when validation rejects")
    for name, (_, text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=text)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init":
            return cmd_init(args)
        cfg = load_config(args.config) if args.config else load_config()
        run = Run(args.command, cfg, args)
        return COMMANDS[args.command][0](run)
    except (InputError, OSError) as exc:
        print(f"hdde: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (NumericalError, SamplerError) as exc:
        print(f"hdde: numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except HDDEError as exc:
        print(f"hdde: error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
