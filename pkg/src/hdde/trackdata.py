"""Trajectory ingestion, regularization and the track metric.

Tracks are stored as arrays of planar ``(lon, lat)`` points in degrees.  A
:class:`TrackSet` holds ``n`` regularized tracks as an ``(n, p, 2)`` array,
which is the representation every other module works with.

The metric between two regularized tracks is the sum of the Euclidean
distances between corresponding points::

    delta(a, b) = sum_i ||a_i - b_i||_2
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
import os
import re
import warnings
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numba
import numpy as np

from .errors import DegenerateTrackError, DimensionError, InputError, ParseError

__all__ = [
    "RawTrack",
    "RegularTrack",
    "TrackSet",
    "GeneratorSpec",
    "parse_tracks",
    "read_tracks",
    "write_tracks_csv",
    "write_hurdat",
    "read_years",
    "regularize",
    "track_distance",
    "delta_matrix",
    "delta_pdist",
    "synthesize_tracks",
]

DEFAULT_P = 13


@dataclass(frozen=True, eq=False)
class RawTrack:
    id: str
    points: np.ndarray
    times: tuple[str, ...] | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InputError(f"track {self.id}: points must have shape (k, 2)")
        if len(pts) < 2:
            raise InputError(f"track {self.id}: needs at least 2 points, got {len(pts)}")
        if not np.all(np.isfinite(pts)):
            raise InputError(f"track {self.id}: non-finite coordinates")
        if np.any(np.abs(pts[:, 1]) > 90.0):
            raise InputError(f"track {self.id}: latitude outside [-90, 90]")
        if self.times is not None and len(self.times) != len(pts):
            raise InputError(f"track {self.id}: {len(self.times)} times for {len(pts)} points")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def year(self) -> int | None:
        if not self.times:
            return None
        m = re.match(r"\s*(\d{4})", self.times[0])
        return int(m.group(1)) if m else None


@dataclass(frozen=True, eq=False)
class RegularTrack:
    id: str
    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InputError(f"track {self.id}: points must have shape (p, 2)")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def p(self) -> int:
        return len(self.points)


@dataclass(frozen=True, eq=False)
class TrackSet:
    """Immutable collection of regularized tracks sharing the same ``p``."""

    ids: tuple[str, ...]
    points: np.ndarray
    years: tuple[int, ...] | None = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 3 or pts.shape[2] != 2:
            raise DimensionError("track array must have shape (n, p, 2)")
        ids = tuple(str(i) for i in self.ids)
        if len(ids) != len(pts):
            raise InputError(f"{len(ids)} ids for {len(pts)} tracks")
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InputError(f"duplicate track ids: {dup[:5]}")
        years = None if self.years is None else tuple(int(y) for y in self.years)
        if years is not None and len(years) != len(ids):
            raise InputError(f"{len(years)} years for {len(ids)} tracks")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "years", years)

    @classmethod
    def from_tracks(cls, tracks: Sequence[RegularTrack], years=None) -> "TrackSet":
        if len(tracks) == 0:
            return cls((), np.empty((0, DEFAULT_P, 2)), years)
        ps = {t.p for t in tracks}
        if len(ps) != 1:
            raise DimensionError(f"tracks have differing numbers of points: {sorted(ps)}")
        return cls(tuple(t.id for t in tracks), np.stack([t.points for t in tracks]), years)

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> RegularTrack:
        return RegularTrack(self.ids[i], self.points[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def p(self) -> int:
        return self.points.shape[1]

    @property
    def d(self) -> int:
        return 2 * self.p

    def subset(self, indices) -> "TrackSet":
        idx = np.asarray(indices, dtype=int)
        years = None if self.years is None else [self.years[i] for i in idx]
        return TrackSet(tuple(self.ids[i] for i in idx), self.points[idx], years)

    def with_years(self, years) -> "TrackSet":
        if isinstance(years, dict):
            missing = [i for i in self.ids if i not in years]
            if missing:
                raise InputError(f"no year for tracks {missing[:5]}")
            years = [years[i] for i in self.ids]
        return TrackSet(self.ids, self.points, years)

    def scaled_longitude(self, factor: float) -> "TrackSet":
        """Copy with longitudes multiplied by ``factor`` (e.g. cos of the mean latitude)."""
        pts = self.points.copy()
        pts[..., 0] *= factor
        return TrackSet(self.ids, pts, self.years)

    def mean_latitude(self) -> float:
        return float(self.points[..., 1].mean())

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\x1f".join(self.ids).encode())
        h.update(np.ascontiguousarray(self.points, dtype="<f8").tobytes())
        if self.years is not None:
            h.update(np.asarray(self.years, dtype="<i8").tobytes())
        return h.hexdigest()


# --------------------------------------------------------------------------
# parsing

_LAT_RE = re.compile(r"^(\d+(?:\.\d*)?)([NS])$", re.IGNORECASE)
_LON_RE = re.compile(r"^(\d+(?:\.\d*)?)([EW])$", re.IGNORECASE)


def _lines(source) -> Iterable[str]:
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8") as fh:
            yield from fh
    elif isinstance(source, str):
        yield from io.StringIO(source)
    else:
        yield from source


def parse_tracks(source, format: str = "csv", skip_short: bool = False) -> list[RawTrack]:
    """Parse a record stream into raw tracks.

    Parameters
    ----------
    source : path, text, or iterable of lines
        A path to an existing file, the file contents as a string, or any
        iterable yielding lines.
    format : {"csv", "hurdat"}
        ``csv`` expects the header ``id,seq,lon,lat`` with one row per fix.
        ``hurdat`` expects blocks introduced by ``ID,NAME,COUNT`` followed by
        ``COUNT`` fix rows holding a timestamp and hemisphere-suffixed
        latitude/longitude (trailing columns are ignored).
    skip_short : bool
        Drop tracks with fewer than two fixes (with a warning) instead of
        raising.

    Returns
    -------
    list of RawTrack, in order of first appearance.
    """
    if format == "csv":
        groups = _parse_csv(_lines(source))
    elif format in ("hurdat", "hurdat-like"):
        groups = _parse_hurdat(_lines(source))
    else:
        raise InputError(f"unknown track format {format!r}")

    tracks = []
    for tid, pts, times in groups:
        if len(pts) < 2:
            if skip_short:
                warnings.warn(f"track {tid} has {len(pts)} point(s); skipped")
                continue
            raise ParseError(f"track {tid} has {len(pts)} point(s); at least 2 required")
        tracks.append(RawTrack(tid, np.asarray(pts, dtype=float), times))
    if not tracks:
        warnings.warn("no tracks found in input")
    return tracks


def _parse_csv(lines):
    reader = csv.reader(lines)
    header = None
    rows: dict[str, list] = {}
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if header is None:
            header = [c.strip().lower() for c in row]
            missing = {"id", "seq", "lon", "lat"} - set(header)
            if missing:
                raise ParseError(f"CSV header lacks columns {sorted(missing)}", lineno)
            col = {name: header.index(name) for name in ("id", "seq", "lon", "lat")}
            continue
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", lineno)
        try:
            tid = row[col["id"]].strip()
            seq = int(row[col["seq"]])
            lon = float(row[col["lon"]])
            lat = float(row[col["lat"]])
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
        if not tid:
            raise ParseError("empty track id", lineno)
        if not (math.isfinite(lon) and math.isfinite(lat)) or abs(lat) > 90:
            raise ParseError(f"invalid coordinate ({lon}, {lat})", lineno)
        rows.setdefault(tid, []).append((seq, lon, lat, lineno))

    out = []
    for tid, fixes in rows.items():
        fixes.sort(key=lambda r: r[0])
        seqs = [f[0] for f in fixes]
        if len(set(seqs)) != len(seqs):
            dup = next(f for a, f in zip(fixes, fixes[1:]) if a[0] == f[0])
            raise ParseError(f"track {tid}: duplicate seq {dup[0]}", dup[3])
        out.append((tid, [(f[1], f[2]) for f in fixes], None))
    return out


def _hemi(value: str, regex, negative: str, lineno: int) -> float:
    m = regex.match(value)
    if not m:
        raise ParseError(f"bad coordinate {value!r}", lineno)
    v = float(m.group(1))
    return -v if m.group(2).upper() == negative else v


def _parse_hurdat(lines):
    out = []
    it = enumerate(lines, start=1)
    for lineno, line in it:
        if not line.strip():
            continue
        head = [f.strip() for f in line.rstrip("\n").split(",")]
        if len(head) < 3 or not head[2].isdigit():
            raise ParseError("expected header 'ID,NAME,COUNT'", lineno)
        tid, count = head[0], int(head[2])
        if not tid:
            raise ParseError("empty storm id", lineno)
        pts, times = [], []
        for _ in range(count):
            try:
                lineno, row = next(it)
            except StopIteration:
                raise ParseError(f"storm {tid}: expected {count} rows, file ended", lineno) from None
            fields_ = [f.strip() for f in row.rstrip("\n").split(",")]
            lat_i = next((k for k, f in enumerate(fields_[1:], 1) if _LAT_RE.match(f)), None)
            if lat_i is None or lat_i + 1 >= len(fields_):
                raise ParseError(f"storm {tid}: no latitude/longitude fields", lineno)
            lat = _hemi(fields_[lat_i], _LAT_RE, "S", lineno)
            lon = _hemi(fields_[lat_i + 1], _LON_RE, "W", lineno)
            if lat > 90:
                raise ParseError(f"latitude {lat} out of range", lineno)
            stamp = fields_[0]
            if lat_i > 1 and fields_[1].isdigit():
                stamp = f"{stamp}{fields_[1]}"
            pts.append((lon, lat))
            times.append(stamp)
        out.append((tid, pts, tuple(times)))
    return out


def read_tracks(path, format: str = "csv", p: int = DEFAULT_P, years_path=None, skip_short: bool = False) -> TrackSet:
    """Parse a file and regularize every track into a :class:`TrackSet`."""
    if not os.path.exists(path):
        raise InputError(f"input file not found: {path}")
    raw = parse_tracks(path, format, skip_short)
    ts = TrackSet.from_tracks([regularize(r, p) for r in raw])
    if years_path is not None:
        ts = ts.with_years(read_years(years_path))
    elif raw and all(r.year is not None for r in raw):
        ts = ts.with_years([r.year for r in raw])
    return ts


def read_years(path) -> dict[str, int]:
    if not os.path.exists(path):
        raise InputError(f"years file not found: {path}")
    out = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"id", "year"} <= set(reader.fieldnames):
            raise ParseError("years CSV needs header 'id,year'", 1)
        for lineno, row in enumerate(reader, start=2):
            try:
                out[row["id"]] = int(row["year"])
            except (TypeError, ValueError):
                raise ParseError(f"bad year {row.get('year')!r}", lineno) from None
    return out


def _fmt(x) -> str:
    return repr(float(x))


def write_tracks_csv(tracks: TrackSet, path_or_stream) -> None:
    """Write tracks in the ``id,seq,lon,lat`` schema accepted by :func:`parse_tracks`."""
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, "w", encoding="utf-8", newline="") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "seq", "lon", "lat"])
        for tid, pts in zip(tracks.ids, tracks.points):
            for s, (lon, lat) in enumerate(pts):
                w.writerow([tid, s, _fmt(lon), _fmt(lat)])
    finally:
        if own:
            fh.close()


def write_years_csv(tracks: TrackSet, path) -> None:
    if tracks.years is None:
        raise InputError("track set carries no years")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "year"])
        w.writerows(zip(tracks.ids, tracks.years))


def write_hurdat(tracks: Sequence[RawTrack], path_or_stream) -> None:
    own = isinstance(path_or_stream, (str, os.PathLike))
    fh = open(path_or_stream, "w", encoding="utf-8") if own else path_or_stream
    try:
        for tr in tracks:
            fh.write(f"{tr.id},UNNAMED,{len(tr.points)},\n")
            times = tr.times or tuple(f"{k:010d}" for k in range(len(tr.points)))
            for stamp, (lon, lat) in zip(times, tr.points):
                ns = "N" if lat >= 0 else "S"
                ew = "W" if lon < 0 else "E"
                fh.write(f"{stamp},{abs(lat):.1f}{ns},{abs(lon):.1f}{ew},\n")
    finally:
        if own:
            fh.close()


# --------------------------------------------------------------------------
# regularization and metric


def regularize(raw, p: int = DEFAULT_P) -> RegularTrack:
    """Resample a polyline at ``p`` points equally spaced in arc length.

    Interpolation is linear between raw fixes; the first and last fixes are
    kept exactly.
    """
    if p < 2:
        raise InputError("p must be at least 2")
    tid = getattr(raw, "id", "")
    pts = np.ascontiguousarray(getattr(raw, "points", raw), dtype=float)
    if len(pts) < 2 or not np.any(pts[1:] != pts[:-1]):
        raise DegenerateTrackError(f"track {tid} has zero path length")
    return RegularTrack(tid, _arc_resample(pts, p))


def _regularize_many(raw: np.ndarray, p: int) -> np.ndarray:
    """:func:`regularize` over a stack ``(n, r, 2)`` of raw tracks."""
    raw = np.ascontiguousarray(raw, dtype=float)
    flat = np.all(raw[:, 1:] == raw[:, :-1], axis=(1, 2))
    if np.any(flat):
        raise DegenerateTrackError(f"track {int(np.flatnonzero(flat)[0])} has zero path length")
    return _arc_resample_many(raw, p)


@numba.njit(cache=True)
def _arc_resample(pts, p):
    r = pts.shape[0]
    cum = np.zeros(r)
    for i in range(1, r):
        dx = pts[i, 0] - pts[i - 1, 0]
        dy = pts[i, 1] - pts[i - 1, 1]
        cum[i] = cum[i - 1] + np.sqrt(dx * dx + dy * dy)
    total = cum[r - 1]
    out = np.empty((p, 2))
    j = 0
    for k in range(p):
        target = total * k / (p - 1)
        while j < r - 2 and cum[j + 1] < target:
            j += 1
        seg = cum[j + 1] - cum[j]
        w = (target - cum[j]) / seg if seg > 0 else 0.0
        if w > 1.0:
            w = 1.0
        out[k, 0] = pts[j, 0] + w * (pts[j + 1, 0] - pts[j, 0])
        out[k, 1] = pts[j, 1] + w * (pts[j + 1, 1] - pts[j, 1])
    out[0, 0], out[0, 1] = pts[0, 0], pts[0, 1]
    out[p - 1, 0], out[p - 1, 1] = pts[r - 1, 0], pts[r - 1, 1]
    return out


@numba.njit(cache=True)
def _arc_resample_many(raw, p):
    out = np.empty((raw.shape[0], p, 2))
    for k in range(raw.shape[0]):
        out[k] = _arc_resample(raw[k], p)
    return out


def _as_points(track) -> np.ndarray:
    return np.asarray(getattr(track, "points", track), dtype=float)


def track_distance(a, b) -> float:
    """Sum of point-wise Euclidean distances between two regularized tracks."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.shape != pb.shape:
        raise DimensionError(f"tracks have shapes {pa.shape} and {pb.shape}")
    return float(np.sqrt(((pa - pb) ** 2).sum(axis=-1)).sum())


@numba.njit(cache=True, fastmath=True)
def _delta_matrix(ax, ay, bx, by):
    # ax, ay: (na, p); bx, by: (p, nb).  Inner loop runs over b so it vectorizes.
    na, p = ax.shape
    nb = bx.shape[1]
    out = np.zeros((na, nb))
    for a in range(na):
        row = out[a]
        for i in range(p):
            x0 = ax[a, i]
            y0 = ay[a, i]
            for b in range(nb):
                dx = x0 - bx[i, b]
                dy = y0 - by[i, b]
                row[b] += np.sqrt(dx * dx + dy * dy)
    return out


@numba.njit(cache=True, fastmath=True)
def _delta_pdist(A):
    n, p, _ = A.shape
    out = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            s = 0.0
            for i in range(p):
                dx = A[a, i, 0] - A[b, i, 0]
                dy = A[a, i, 1] - A[b, i, 1]
                s += np.sqrt(dx * dx + dy * dy)
            out[a, b] = s
            out[b, a] = s
    return out


def _stack(tracks) -> np.ndarray:
    arr = getattr(tracks, "points", tracks)
    if isinstance(arr, (list, tuple)):
        arr = np.stack([_as_points(t) for t in arr])
    return np.ascontiguousarray(arr, dtype=np.float64)


def delta_matrix(A, B) -> np.ndarray:
    """Matrix of track distances between two stacks of shape ``(na, p, 2)`` and ``(nb, p, 2)``."""
    a, b = _stack(A), _stack(B)
    if a.shape[1:] != b.shape[1:]:
        raise DimensionError(f"track shapes differ: {a.shape[1:]} vs {b.shape[1:]}")
    bt = np.ascontiguousarray(b.transpose(2, 1, 0))
    return _delta_matrix(
        np.ascontiguousarray(a[..., 0]), np.ascontiguousarray(a[..., 1]), bt[0], bt[1]
    )


def delta_pdist(A) -> np.ndarray:
    """Symmetric matrix of pairwise track distances with an exact zero diagonal."""
    return _delta_pdist(_stack(A))


# --------------------------------------------------------------------------
# synthetic generator


@dataclass(frozen=True)
class GeneratorSpec:
    """Latent ranges for the synthetic track generator.

    Every track is a straight path of ``length`` degrees along ``heading``
    (degrees counter-clockwise from east) with midpoint
    ``(center_lon, center_lat)``, bent sideways by the zero-mean parabola
    ``curvature * (4 s (1 - s) - 2/3)`` in the along-track fraction ``s``.
    Genesis and lysis points follow from these.  Translation, rotation about
    the midpoint and the centred bend move the fixes in mutually orthogonal
    patterns, so each varying factor is a separate direction of the track
    manifold.

    Each factor is drawn over its ``(lo, hi)`` range from a Beta(2, 2) law
    (``latent="beta"``, density tapering to zero at the ends) or uniformly
    (``latent="uniform"``); ``lo == hi`` fixes the factor.  The defaults vary centre longitude, centre latitude and
    curvature: intrinsic dimension three.
    """

    center_lon: tuple[float, float] = (-60.0, -45.0)
    center_lat: tuple[float, float] = (20.0, 35.0)
    heading: tuple[float, float] = (135.0, 135.0)
    curvature: tuple[float, float] = (-25.0, 25.0)
    length: float = 40.0
    raw_points: int = 30
    jitter: float = 0.0
    latent: str = "beta"
    p: int = DEFAULT_P
    years: tuple[int, int] = (1950, 2005)

    @classmethod
    def from_mapping(cls, mapping) -> "GeneratorSpec":
        """Build from flat key-value pairs; ranges are written ``lo,hi``."""
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for key, value in mapping.items():
            if key not in types:
                continue
            if isinstance(value, str):
                parts = [v.strip() for v in value.split(",") if v.strip()]
                if "tuple" in str(types[key]):
                    cast = int if key == "years" else float
                    value = tuple(cast(v) for v in parts)
                    if len(value) == 1:
                        value = value * 2
                elif types[key] in ("int", int):
                    value = int(parts[0])
                elif types[key] in ("str", str):
                    value = parts[0]
                else:
                    value = float(parts[0])
            kw[key] = value
        return cls(**kw)

    @property
    def ranges(self) -> np.ndarray:
        return np.array([self.center_lon, self.center_lat, self.heading, self.curvature], dtype=float)

    @property
    def latent_dim(self) -> int:
        r = self.ranges
        return int(np.sum(r[:, 1] > r[:, 0]))


def _latent_tracks(latent: np.ndarray, spec: GeneratorSpec, rng) -> np.ndarray:
    s = np.linspace(0.0, 1.0, spec.raw_points)
    along = spec.length * (s - 0.5)
    bend = 4.0 * s * (1.0 - s) - 2.0 / 3.0
    th = np.deg2rad(latent[:, 2])
    u = np.stack([np.cos(th), np.sin(th)], axis=1)
    right = np.stack([u[:, 1], -u[:, 0]], axis=1)
    out = (
        latent[:, None, :2]
        + along[None, :, None] * u[:, None, :]
        + (latent[:, 3, None] * bend[None, :])[:, :, None] * right[:, None, :]
    )
    if spec.jitter > 0:
        out = out + rng.normal(scale=spec.jitter, size=out.shape)
    return out


def sample_latent(n: int, spec: GeneratorSpec, rng) -> np.ndarray:
    """Latent draws, one row per track: ``(center_lon, center_lat, heading, curvature)``."""
    r = spec.ranges
    if spec.latent == "uniform":
        u = rng.random((n, len(r)))
    elif spec.latent == "beta":
        u = rng.beta(2.0, 2.0, size=(n, len(r)))
    else:
        raise InputError(f"unknown latent distribution {spec.latent!r}")
    return r[:, 0] + (r[:, 1] - r[:, 0]) * u


def synthesize_tracks(n: int, spec: GeneratorSpec | None = None, seed=0, prefix: str = "S") -> TrackSet:
    """Draw ``n`` regularized tracks from the latent-factor generator.

    Output is a deterministic function of ``(n, spec, seed)``.
    """
    if n < 1:
        raise InputError("n must be at least 1")
    spec = spec or GeneratorSpec()
    rng = np.random.default_rng(seed)
    latent = sample_latent(n, spec, rng)
    raw = _latent_tracks(latent, spec, rng)
    width = max(4, len(str(n - 1)))
    ids = [f"{prefix}{k:0{width}d}" for k in range(n)]
    pts = _regularize_many(raw, spec.p)
    years = rng.integers(spec.years[0], spec.years[1] + 1, size=n)
    return TrackSet(tuple(ids), pts, tuple(int(y) for y in years))
