"""Two-sample nearest-neighbour validation of a track simulator.

The statistic is the fraction of a pooled two-sample set whose nearest
neighbour (under the track metric) comes from its own sample.  If both
samples share a distribution it is close to one half; a simulator that
misses part of the observed variability pushes it above one half.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import InputError, NumericalError, SamplerError
from .trackdata import TrackSet, delta_pdist

__all__ = [
    "ValidationReport",
    "DimensionResult",
    "nn_flags",
    "nn_statistic",
    "simulated_test",
    "assessment_rows",
    "write_assessment",
    "in_region",
    "choose_dimension",
    "select_dimension",
]


def _points(x) -> np.ndarray:
    return np.asarray(getattr(x, "points", x), dtype=float)


def nn_flags(A, B, metric: Callable | None = None) -> np.ndarray:
    """Within-sample nearest-neighbour flag for each of the pooled ``A + B`` items.

    Nearest-neighbour ties go to the smallest pooled index.
    """
    a, b = _points(A), _points(B)
    if len(a) < 1 or len(b) < 1 or len(a) + len(b) < 3:
        raise InputError("need at least three pooled items")
    pooled = np.concatenate([a, b])
    D = delta_pdist(pooled) if metric is None else np.array(metric(pooled, pooled), dtype=float)
    if not np.all(np.isfinite(D)):
        raise NumericalError("metric returned non-finite distances")
    np.fill_diagonal(D, np.inf)
    nn = np.argmin(D, axis=1)
    labels = np.r_[np.zeros(len(a), dtype=int), np.ones(len(b), dtype=int)]
    return labels[nn] == labels


def nn_statistic(A, B, metric: Callable | None = None) -> float:
    """Proportion of pooled items whose nearest neighbour is from the same sample."""
    if len(_points(A)) != len(_points(B)) or len(_points(A)) < 2:
        raise InputError("samples must have equal size n >= 2")
    return float(nn_flags(A, B, metric).mean())


@dataclass(frozen=True, eq=False)
class ValidationReport:
    ell_star: float
    null: np.ndarray = field(repr=False)
    p_value: float
    p_value_two_sided: float
    labels: np.ndarray = field(repr=False)  # 0 observed, 1 simulated
    within: np.ndarray = field(repr=False)
    ids: tuple[str, ...] = field(repr=False)
    k: int
    n: int
    seed: int | None
    simulated: TrackSet | None = field(default=None, repr=False)

    @property
    def within_count(self) -> int:
        return int(self.within.sum())

    def rejects(self, alpha: float = 0.05) -> bool:
        return self.p_value <= alpha

    def to_dict(self) -> dict:
        q = np.percentile(self.null, [0, 25, 50, 75, 100])
        return {
            "ell_star": float(self.ell_star),
            "within_count": self.within_count,
            "pooled": int(len(self.within)),
            "k": int(self.k),
            "n": int(self.n),
            "p_value": float(self.p_value),
            "p_value_two_sided": float(self.p_value_two_sided),
            "exceedances": int(np.sum(self.null >= self.ell_star)),
            "null_summary": dict(zip(["min", "q25", "median", "q75", "max"], map(float, q))),
            "seed": self.seed,
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _replicate(sampler, seeds, metric=None):
    a, b = sampler(seeds[0]), sampler(seeds[1])
    return nn_statistic(a, b, metric)


def simulated_test(
    sampler: Callable,
    observed,
    k: int,
    seed: int | None = 0,
    jobs: int = 1,
    metric: Callable | None = None,
) -> ValidationReport:
    """Monte Carlo test of whether ``observed`` looks like output of ``sampler``.

    ``sampler(seed)`` must return a sample the size of ``observed``.  ``k``
    pairs of sampler draws give the null distribution of the statistic; one
    more draw paired with ``observed`` gives ``ell_star``.  The p-value is the
    upper-tail ``(#{null >= ell_star} + 1) / (k + 1)``; a two-sided version
    is reported alongside.  ``metric(A, B)`` returns the pairwise distance
    matrix; the default is the track distance.
    """
    if k < 1:
        raise InputError("k must be >= 1")
    obs = _points(observed)
    n = len(obs)
    children = np.random.SeedSequence(seed).spawn(2 * k + 1)
    pairs = [(children[2 * i], children[2 * i + 1]) for i in range(k)]

    null = np.empty(k)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_replicate, sampler, s, metric) for s in pairs]
            for i, fut in enumerate(futures):
                try:
                    null[i] = fut.result()
                except Exception as exc:
                    raise SamplerError(i, exc) from exc
    else:
        for i, s in enumerate(pairs):
            try:
                null[i] = _replicate(sampler, s, metric)
            except Exception as exc:
                raise SamplerError(i, exc) from exc

    try:
        final = sampler(children[2 * k])
    except Exception as exc:
        raise SamplerError(k, exc) from exc
    if len(_points(final)) != n:
        raise SamplerError(k, f"sampler returned {len(_points(final))} items, expected {n}")
    within = nn_flags(obs, final, metric)
    ell = float(within.mean())
    upper = (np.sum(null >= ell) + 1) / (k + 1)
    lower = (np.sum(null <= ell) + 1) / (k + 1)
    obs_ids = tuple(getattr(observed, "ids", None) or (f"obs{i}" for i in range(n)))
    sim_ids = tuple(getattr(final, "ids", None) or (f"sim{i}" for i in range(n)))
    return ValidationReport(
        ell_star=ell,
        null=null,
        p_value=float(upper),
        p_value_two_sided=float(min(1.0, 2 * min(upper, lower))),
        labels=np.r_[np.zeros(n, dtype=int), np.ones(n, dtype=int)],
        within=within,
        ids=obs_ids + sim_ids,
        k=k,
        n=n,
        seed=seed,
        simulated=final if isinstance(final, TrackSet) else None,
    )


SAMPLE_NAMES = ("observed", "simulated")


def assessment_rows(report: ValidationReport, embeddings: Mapping[str, Sequence[float]]) -> list[tuple]:
    """Rows ``(id, sample, within_nn, d1, ..., dm)`` for plotting.

    ``embeddings`` maps every pooled id to its diffusion coordinates.
    """
    missing = [i for i in report.ids if i not in embeddings]
    if missing:
        raise InputError(f"no embedding for ids {missing[:5]}")
    if len(set(report.ids)) != len(report.ids):
        raise InputError("observed and simulated ids collide")
    return [
        (tid, SAMPLE_NAMES[lab], bool(w), *map(float, embeddings[tid]))
        for tid, lab, w in zip(report.ids, report.labels, report.within)
    ]


def write_assessment(path, rows: list[tuple]) -> None:
    m = len(rows[0]) - 3 if rows else 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "sample", "within_nn"] + [f"d{j + 1}" for j in range(m)])
        for tid, sample, within, *coords in rows:
            w.writerow([tid, sample, int(within)] + [repr(c) for c in coords])


def in_region(coords: np.ndarray, box: Sequence[tuple[float, float]]) -> np.ndarray:
    """Boolean mask of rows inside an axis-aligned box over the leading coordinates."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    mask = np.ones(len(coords), dtype=bool)
    for j, (lo, hi) in enumerate(box):
        mask &= (coords[:, j] >= lo) & (coords[:, j] <= hi)
    return mask


# --------------------------------------------------------------------------
# dimension selection


@dataclass(frozen=True)
class DimensionResult:
    selected: int
    mean_ratio: dict
    ratios: dict = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "selected": int(self.selected),
            "mean_ratio": {str(m): (None if not np.isfinite(v) else float(v)) for m, v in self.mean_ratio.items()},
        }


def choose_dimension(mean_ratio: Mapping[int, float]) -> int:
    """Dimension whose mean ratio is closest to 0.5; ties go to the smaller one."""
    feasible = {m: v for m, v in mean_ratio.items() if np.isfinite(v)}
    if not feasible:
        raise NumericalError("no feasible dimension")
    return min(feasible, key=lambda m: (abs(feasible[m] - 0.5), m))


def select_dimension(
    tracks: TrackSet,
    candidates: Sequence[int] = (2, 3, 4),
    sims: int = 100,
    epsilon: float | None = None,
    t: int = 1,
    k: int | None = None,
    preimage_config=None,
    seed: int | None = 0,
) -> DimensionResult:
    """Pick the embedding dimension whose simulations best match ``tracks``.

    For each candidate ``m`` the pipeline is fitted and ``sims`` simulated sets
    of size ``n`` are drawn; the mean of ``L(observed, simulated)`` is
    compared with 0.5.  A candidate whose fit fails is skipped.
    """
    from .pipeline import fit_pipeline, simulate

    if not candidates:
        raise InputError("no candidate dimensions")
    D = delta_pdist(tracks)
    if epsilon is None:
        epsilon = float(np.median(D[np.triu_indices(len(tracks), 1)] ** 2))
    n = len(tracks)
    means, ratios = {}, {}
    for m, ss in zip(candidates, np.random.SeedSequence(seed).spawn(len(candidates))):
        try:
            fitted = fit_pipeline(tracks, epsilon, t, m, k, preimage_config, distances=D)
            vals = [nn_statistic(tracks, simulate(fitted, n, s)[0]) for s in ss.spawn(sims)]
        except (NumericalError, InputError):
            means[m], ratios[m] = np.nan, []
            continue
        ratios[m] = vals
        means[m] = float(np.mean(vals))
    return DimensionResult(choose_dimension(means), means, ratios)
