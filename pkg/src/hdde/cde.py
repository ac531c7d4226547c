"""Conditional analysis of track densities.

Two pieces live here.  The first splits the track set by a per-year
condition (for example a seasonal sea-surface temperature), fits separate
kNN densities to the hot-year and cold-year tracks in one shared diffusion
map, and lists the tracks that fall in a chosen region of that map.  The
second is orthogonal-series density estimation: a cosine basis for a scalar
predictor, diffusion eigenvectors (or any sampled basis) for the response,
and the estimator

    theta_ij = 1/n sum_k phi_i(x_k) psi_j(y_k) / f_X(x_k)

of the coefficients of ``f(y | x) = sum_ij theta_ij phi_i(x) psi_j(y)``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba
import numpy as np

from .density import KNNDensity, fit_knn_kde
from .diffusion import DiffusionModel, build_model, extension_rows
from .errors import (
    DensityFloorError,
    DimensionError,
    ExtrapolationError,
    InputError,
    ParseError,
    ZeroBandwidthError,
)
from .trackdata import TrackSet
from .validation import in_region

__all__ = [
    "ConditionSplit",
    "ConditionalDensities",
    "split_by_condition",
    "read_condition_series",
    "write_condition_series",
    "conditional_densities",
    "region_tracks",
    "SSTField",
    "read_sst_field",
    "sst_over_track",
    "sst_series",
    "CosineBasis",
    "SampledBasis",
    "diffusion_basis",
    "MarginalSeries",
    "SeriesEstimate",
    "ReflectedKDE",
    "fit_series_marginal",
    "fit_series_conditional",
    "DEFAULT_CUTOFF",
    "DENSITY_FLOOR",
    "write_conditional_report",
]

DEFAULT_CUTOFF = 5
DENSITY_FLOOR = 1e-6


# --------------------------------------------------------------------------
# hot / cold split


@dataclass(frozen=True)
class ConditionSplit:
    condition: Mapping[int, float] = field(repr=False)
    hot: tuple[int, ...]
    cold: tuple[int, ...]
    hot_index: np.ndarray = field(repr=False)
    cold_index: np.ndarray = field(repr=False)

    @property
    def counts(self) -> dict:
        return {
            "hot_years": len(self.hot),
            "cold_years": len(self.cold),
            "hot_tracks": int(len(self.hot_index)),
            "cold_tracks": int(len(self.cold_index)),
        }


def read_condition_series(path) -> dict[int, float]:
    """Read a ``year,value`` CSV."""
    out = {}
    try:
        fh = open(path, encoding="utf-8", newline="")
    except FileNotFoundError:
        raise InputError(f"condition series not found: {path}") from None
    with fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"year", "value"} <= set(reader.fieldnames):
            raise ParseError("condition CSV needs header 'year,value'", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                year, value = int(row["year"]), float(row["value"])
            except (TypeError, ValueError):
                raise ParseError(f"bad record {row}", lineno) from None
            if year in out:
                raise ParseError(f"duplicate year {year}", lineno)
            out[year] = value
    return out


def write_condition_series(path, series: Mapping[int, float]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "value"])
        for year in sorted(series):
            w.writerow([int(year), repr(float(series[year]))])


def split_by_condition(tracks: TrackSet, condition: Mapping[int, float], count: int = 19) -> ConditionSplit:
    """Partition ``tracks`` by the ``count`` highest and lowest condition years.

    Hot years are picked first; cold years come from the remainder.  Equal
    condition values are ordered by year, earlier first, on both sides.
    """
    if tracks.years is None:
        raise InputError("tracks carry no years")
    if count < 1:
        raise InputError("count must be >= 1")
    cond = {int(y): float(v) for y, v in condition.items()}
    missing = sorted({y for y in tracks.years if y not in cond})
    if missing:
        raise InputError(f"no condition value for years {missing[:10]}")
    if len(cond) < 2 * count:
        raise InputError(f"{len(cond)} distinct years, need at least {2 * count}")
    years = sorted(cond)
    hot = sorted(years, key=lambda y: (-cond[y], y))[:count]
    rest = [y for y in years if y not in set(hot)]
    cold = sorted(rest, key=lambda y: (cond[y], y))[:count]
    ty = np.asarray(tracks.years)
    return ConditionSplit(
        cond,
        tuple(sorted(hot)),
        tuple(sorted(cold)),
        np.flatnonzero(np.isin(ty, hot)),
        np.flatnonzero(np.isin(ty, cold)),
    )


@dataclass(frozen=True, eq=False)
class ConditionalDensities:
    """Hot- and cold-year densities on one diffusion map."""

    model: DiffusionModel
    split: ConditionSplit
    hot: KNNDensity
    cold: KNNDensity

    def difference(self, z) -> np.ndarray:
        return self.hot.evaluate(z) - self.cold.evaluate(z)

    def summary(self) -> dict:
        emb = self.model.embedding
        out = {"model_sha256": self.model.tracks.content_hash(), **self.split.counts}
        for name, est, idx in (("hot", self.hot, self.split.hot_index), ("cold", self.cold, self.split.cold_index)):
            out[name] = {
                "years": list(getattr(self.split, name)),
                "k": int(est.k),
                "mean": [float(v) for v in emb[idx].mean(axis=0)],
                "density_at_own_tracks_mean": float(est.evaluate(emb[idx]).mean()),
            }
        return out


def conditional_densities(
    tracks: TrackSet,
    split: ConditionSplit,
    epsilon: float,
    t: int = 1,
    m: int = 3,
    k: int | None = None,
    distances: np.ndarray | None = None,
) -> ConditionalDensities:
    """Build one map on all tracks, then fit a kNN density to each side of the split."""
    if len(split.hot_index) == 0 or len(split.cold_index) == 0:
        raise InputError("both sides of the split need at least one track")
    model = build_model(tracks, epsilon, t, m, distances=distances)
    emb = model.embedding
    hot = fit_knn_kde(emb[split.hot_index], k)
    cold = fit_knn_kde(emb[split.cold_index], k)
    return ConditionalDensities(model, split, hot, cold)


def region_tracks(model: DiffusionModel, box: Sequence[tuple[float, float]], indices=None) -> list[str]:
    """Ids of training tracks whose diffusion coordinates fall inside ``box``."""
    idx = np.arange(model.n) if indices is None else np.asarray(indices, dtype=int)
    if len(box) > model.m:
        raise DimensionError(f"box has {len(box)} axes, embedding has {model.m}")
    hits = idx[in_region(model.embedding[idx], box)]
    return [model.tracks.ids[i] for i in hits]


# --------------------------------------------------------------------------
# gridded SST


def _regular_axis(values: np.ndarray, name: str) -> np.ndarray:
    axis = np.unique(values)
    if len(axis) < 2:
        raise InputError(f"{name} axis needs at least two values")
    steps = np.diff(axis)
    if not np.allclose(steps, steps[0], rtol=1e-6, atol=1e-9):
        raise InputError(f"{name} axis is not regularly spaced")
    return axis


@dataclass(frozen=True, eq=False)
class SSTField:
    """Temperature on a regular ``lon x lat`` grid at a sequence of time labels.

    ``values[t, i, j]`` is the value at ``times[t]``, ``lons[i]``, ``lats[j]``;
    missing cells are NaN.
    """

    times: tuple[str, ...]
    lons: np.ndarray = field(repr=False)
    lats: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.times), len(self.lons), len(self.lats)):
            raise DimensionError(f"values shape {v.shape} does not match the axes")
        if np.any(np.isinf(v)):
            raise InputError("field contains infinite values")
        _regular_axis(np.asarray(self.lons), "lon")
        _regular_axis(np.asarray(self.lats), "lat")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "times", tuple(str(s) for s in self.times))

    def frame(self, time) -> np.ndarray:
        try:
            return self.values[self.times.index(str(time))]
        except ValueError:
            raise InputError(f"time {time!r} not in field") from None

    def _wrap(self, lon: np.ndarray) -> np.ndarray:
        lo, hi = self.lons[0], self.lons[-1]
        lon = np.asarray(lon, dtype=float).copy()
        for shift in (360.0, -360.0):
            move = ((lon < lo) | (lon > hi)) & (lon + shift >= lo) & (lon + shift <= hi)
            lon[move] += shift
        return lon

    def sample(self, time, lon, lat) -> np.ndarray:
        """Bilinear interpolation; longitudes are tried modulo 360."""
        grid = self.frame(time)
        lon = self._wrap(np.atleast_1d(lon))
        lat = np.atleast_1d(np.asarray(lat, dtype=float))
        out_lon = (lon < self.lons[0]) | (lon > self.lons[-1])
        out_lat = (lat < self.lats[0]) | (lat > self.lats[-1])
        if np.any(out_lon | out_lat):
            k = int(np.flatnonzero(out_lon | out_lat)[0])
            raise ExtrapolationError(f"point ({lon[k]:g}, {lat[k]:g}) is outside the field grid")
        i = np.clip(np.searchsorted(self.lons, lon, side="right") - 1, 0, len(self.lons) - 2)
        j = np.clip(np.searchsorted(self.lats, lat, side="right") - 1, 0, len(self.lats) - 2)
        u = (lon - self.lons[i]) / (self.lons[i + 1] - self.lons[i])
        v = (lat - self.lats[j]) / (self.lats[j + 1] - self.lats[j])
        corners = np.stack([grid[i, j], grid[i + 1, j], grid[i, j + 1], grid[i + 1, j + 1]])
        w = np.stack([(1 - u) * (1 - v), u * (1 - v), (1 - u) * v, u * v])
        if np.any(np.isnan(corners) & (w > 0)):
            raise InputError(f"missing field value needed at time {time!r}")
        return np.sum(np.where(w > 0, corners, 0.0) * w, axis=0)


def read_sst_field(path) -> SSTField:
    """Read a ``time,lon,lat,value`` CSV; an empty or ``NaN`` value marks a missing cell."""
    rows = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().lower() for h in next(reader, [])]
        if header != ["time", "lon", "lat", "value"]:
            raise ParseError(f"expected header time,lon,lat,value, got {','.join(header)}", 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec or not "".join(rec).strip():
                continue
            if len(rec) != 4:
                raise ParseError(f"expected 4 fields, got {len(rec)}", lineno)
            try:
                value = float(rec[3]) if rec[3].strip() else np.nan
                rows.append((rec[0].strip(), float(rec[1]), float(rec[2]), value))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
    if not rows:
        raise InputError(f"{path}: no field values")
    times = tuple(dict.fromkeys(r[0] for r in rows))
    lons = _regular_axis(np.array([r[1] for r in rows]), "lon")
    lats = _regular_axis(np.array([r[2] for r in rows]), "lat")
    values = np.full((len(times), len(lons), len(lats)), np.nan)
    seen = np.zeros(values.shape, dtype=bool)
    tpos = {s: i for i, s in enumerate(times)}
    for s, lo, la, val in rows:
        key = (tpos[s], int(np.searchsorted(lons, lo)), int(np.searchsorted(lats, la)))
        if seen[key]:
            raise InputError(f"duplicate cell at time {s}, lon {lo:g}, lat {la:g}")
        seen[key] = True
        values[key] = val
    if not seen.all():
        raise InputError(f"{path}: grid is incomplete ({int((~seen).sum())} cells absent)")
    return SSTField(times, lons, lats, values)


def sst_over_track(sst: SSTField, track, time) -> float:
    """Mean of the field sampled at each point of a regularized track."""
    pts = np.asarray(getattr(track, "points", track), dtype=float)
    return float(np.mean(sst.sample(time, pts[:, 0], pts[:, 1])))


def sst_series(sst: SSTField, tracks: TrackSet, times: Sequence | None = None) -> np.ndarray:
    """Track-averaged SST for every track at each time label.

    Returns shape ``(len(times), n)``; ``times`` defaults to all labels.
    """
    times = sst.times if times is None else tuple(times)
    return np.array([[sst_over_track(sst, x, s) for x in tracks.points] for s in times])


# --------------------------------------------------------------------------
# orthogonal series


@dataclass(frozen=True)
class CosineBasis:
    """Orthonormal cosine basis on ``[lower, upper]``.

    ``phi_0 = 1/sqrt(L)`` and ``phi_i(x) = sqrt(2/L) cos(i pi (x - lower) / L)``.
    """

    lower: float
    upper: float

    def __post_init__(self):
        if not self.upper > self.lower:
            raise InputError(f"empty support [{self.lower}, {self.upper}]")

    @classmethod
    def from_sample(cls, x) -> "CosineBasis":
        x = np.asarray(x, dtype=float)
        return cls(float(x.min()), float(x.max()))

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def __call__(self, x, cutoff: int) -> np.ndarray:
        """Basis values, shape ``(len(x), cutoff + 1)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        bad = (x < self.lower) | (x > self.upper) | ~np.isfinite(x)
        if np.any(bad):
            raise InputError(f"values outside support [{self.lower}, {self.upper}]: {x[bad][:5].tolist()}")
        L = self.length
        i = np.arange(cutoff + 1)
        out = np.sqrt(2.0 / L) * np.cos(np.pi * np.outer((x - self.lower) / L, i))
        out[:, 0] = 1.0 / np.sqrt(L)
        return out

    def describe(self) -> dict:
        return {"kind": "cosine", "lower": self.lower, "upper": self.upper}


@dataclass(frozen=True, eq=False)
class SampledBasis:
    """Basis functions known through their values on a sample.

    ``values[k, j]`` is ``psi_j`` at sample point ``k``.  ``extend`` maps new
    inputs to basis values when such a map exists.
    """

    values: np.ndarray = field(repr=False)
    scale: np.ndarray = field(repr=False)
    extend: Callable | None = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def describe(self) -> dict:
        return {"kind": "sampled", "functions": int(self.size), "scale": [float(s) for s in self.scale]}


def diffusion_basis(model: DiffusionModel, cutoff: int = DEFAULT_CUTOFF) -> SampledBasis:
    """Eigenvectors ``psi_0..psi_J`` rescaled to unit empirical norm on the training tracks."""
    J = int(cutoff)
    if J < 0 or J + 1 > model.eigenvectors.shape[1]:
        raise InputError(f"cutoff {J} exceeds the {model.eigenvectors.shape[1]} available eigenvectors")
    psi = model.eigenvectors[:, : J + 1]
    scale = np.sqrt(np.mean(psi**2, axis=0))
    lam = model.eigenvalues[: J + 1]

    def extend(tracks) -> np.ndarray:
        rows = extension_rows(model, getattr(tracks, "points", tracks))
        return (rows @ psi) / lam / scale

    values = psi / scale
    values.setflags(write=False)
    return SampledBasis(values, scale, extend)


@dataclass(frozen=True, eq=False)
class MarginalSeries:
    basis: CosineBasis
    coef: np.ndarray

    @property
    def cutoff(self) -> int:
        return len(self.coef) - 1

    def __call__(self, z) -> np.ndarray:
        return self.basis(z, self.cutoff) @ self.coef


def fit_series_marginal(values, basis: CosineBasis | None = None, cutoff: int = DEFAULT_CUTOFF) -> MarginalSeries:
    """Coefficients ``theta_i = mean_j phi_i(z_j)`` for ``i = 0..cutoff``."""
    z = np.atleast_1d(np.asarray(values, dtype=float))
    if z.size < 1:
        raise InputError("need at least one value")
    if cutoff < 0:
        raise InputError("cutoff must be >= 0")
    basis = CosineBasis.from_sample(z) if basis is None else basis
    return MarginalSeries(basis, basis(z, cutoff).mean(axis=0))


@dataclass(frozen=True, eq=False)
class ReflectedKDE:
    """Gaussian KDE on ``[lower, upper]`` with reflection at both ends.

    Reflection keeps the estimate from halving near the boundary, which
    would otherwise bias every ``1 / f_X`` weight there.
    """

    sample: np.ndarray = field(repr=False)
    bandwidth: float
    lower: float
    upper: float

    @classmethod
    def fit(cls, x, lower: float, upper: float) -> "ReflectedKDE":
        x = np.asarray(x, dtype=float)
        n = len(x)
        sd = np.std(x, ddof=1) if n > 1 else 0.0
        iqr = np.subtract(*np.percentile(x, [75, 25]))
        spread = min(sd, iqr / 1.34) if iqr > 0 else sd
        h = 0.9 * spread * n ** (-0.2)
        if not h > 0:
            raise ZeroBandwidthError("predictor sample has zero spread")
        return cls(x, float(h), float(lower), float(upper))

    def __call__(self, x) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=float)))
        mirrors = np.sort(np.concatenate([self.sample, 2 * self.lower - self.sample, 2 * self.upper - self.sample]))
        return _gauss_sum(x, mirrors, self.bandwidth) / (len(self.sample) * self.bandwidth * np.sqrt(2 * np.pi))


@numba.njit(cache=True, fastmath=True)
def _gauss_sum(x, centres, h):
    # centres sorted; terms beyond 8.5 h are below 1e-15 and skipped
    out = np.zeros(len(x))
    c = -0.5 / (h * h)
    lo = np.searchsorted(centres, x - 8.5 * h)
    hi = np.searchsorted(centres, x + 8.5 * h)
    for a in range(len(x)):
        s = 0.0
        for b in range(lo[a], hi[a]):
            r = x[a] - centres[b]
            s += np.exp(c * r * r)
        out[a] = s
    return out


@dataclass(frozen=True, eq=False)
class SeriesEstimate:
    predictor: CosineBasis
    response: dict
    coef: np.ndarray  # (I + 1, J + 1)
    fx: Callable = field(repr=False)

    @property
    def cutoffs(self) -> tuple[int, int]:
        return self.coef.shape[0] - 1, self.coef.shape[1] - 1

    def conditional(self, x, response_values) -> np.ndarray:
        """``f(y | x)`` for each ``x`` (rows) and each response point (columns).

        ``response_values`` holds basis values ``psi_0..psi_J`` per response point.
        """
        R = np.atleast_2d(np.asarray(response_values, dtype=float))
        if R.shape[1] != self.coef.shape[1]:
            raise DimensionError(f"response basis has {R.shape[1]} columns, need {self.coef.shape[1]}")
        return self.predictor(x, self.cutoffs[0]) @ self.coef @ R.T

    def to_dict(self) -> dict:
        return {
            "cutoffs": list(self.cutoffs),
            "predictor_basis": self.predictor.describe(),
            "response_basis": self.response,
            "coefficients": [[float(c) for c in row] for row in self.coef],
        }


def fit_series_conditional(
    x,
    response: SampledBasis | np.ndarray,
    predictor: CosineBasis | None = None,
    cutoff: int = DEFAULT_CUTOFF,
    fx: Callable | np.ndarray | float | None = None,
    floor: float = DENSITY_FLOOR,
) -> SeriesEstimate:
    """Series estimate of ``f(y | x)`` from pairs ``(x_k, y_k)``.

    ``response`` gives ``psi_j(y_k)`` as a ``(n, J + 1)`` matrix, or a
    :class:`SampledBasis` whose rows are the ``y_k``.  ``fx`` is the predictor
    density: a callable, its values at the ``x_k``, a constant, or ``None``
    for a reflected Gaussian KDE on the predictor support.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if isinstance(response, SampledBasis):
        R, desc = response.values, response.describe()
    else:
        R = np.atleast_2d(np.asarray(response, dtype=float))
        desc = {"kind": "matrix", "functions": int(R.shape[1])}
    if len(R) != len(x):
        raise DimensionError(f"{len(x)} predictor values but {len(R)} response rows")
    if len(x) < 1:
        raise InputError("need at least one pair")
    predictor = CosineBasis.from_sample(x) if predictor is None else predictor
    Phi = predictor(x, cutoff)

    if fx is None:
        fx = ReflectedKDE.fit(x, predictor.lower, predictor.upper)
    if callable(fx):
        f = np.asarray(fx(x), dtype=float)
        density = fx
    else:
        f = np.broadcast_to(np.asarray(fx, dtype=float), x.shape)
        const = float(f[0]) if np.ndim(fx) == 0 else None
        density = (lambda z: np.full(np.shape(np.atleast_1d(z)), const)) if const is not None else None
    low = ~(f > floor)
    if np.any(low):
        raise DensityFloorError(x[low], floor)
    coef = (Phi / f[:, None]).T @ R / len(x)
    if not np.all(np.isfinite(coef)):
        raise InputError("non-finite coefficients")
    return SeriesEstimate(predictor, desc, coef, density)


def write_conditional_report(path, report: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
