"""Run configuration: a flat INI file with one section per stage.

Every key has a default, so an empty file is a valid configuration.
``render_template`` writes all keys with their defaults and a one-line note.
Relative paths are resolved against the directory of the config file.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import get_type_hints

from .errors import InputError
from .preimage import ANCHORS, DEFAULT_STRETCHES

__all__ = ["PipelineConfig", "load_config", "render_template"]


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _words(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _box(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for part in text.split(";"):
        if part.strip():
            lo, hi = _floats(part.replace(";", ""))
            out.append((lo, hi))
    return tuple(out)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(f"{a:g},{b:g}" for a, b in value)
        return ",".join(f"{v:g}" if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


_PARSERS = {
    "str": str,
    "int": int,
    "float": float,
    "bool": lambda s: s.strip().lower() in ("1", "true", "yes", "on"),
    "tuple[float, ...]": _floats,
    "tuple[int, ...]": _ints,
    "tuple[str, ...]": _words,
    "tuple[tuple[float, float], ...]": _box,
    "str | None": lambda s: s or None,
    "int | None": lambda s: None if s.strip().lower() in ("", "auto") else int(s),
    "float | None": lambda s: None if s.strip().lower() in ("", "auto") else float(s),
    "tuple[float, ...] | None": lambda s: None if s.strip().lower() in ("", "auto") else _floats(s),
}


@dataclass
class InputSection:
    path: str | None = field(default=None, metadata={"note": "track file"})
    format: str = field(default="csv", metadata={"note": "csv (id,seq,lon,lat) or hurdat"})
    years: str | None = field(default=None, metadata={"note": "optional id,year file; hurdat input carries years"})
    p: int = field(default=13, metadata={"note": "points per regularized track"})
    skip_short: bool = field(default=False, metadata={"note": "drop one-point tracks instead of failing"})
    lon_scale: bool = field(default=False, metadata={"note": "multiply longitudes by cos(mean latitude)"})


@dataclass
class DiffusionSection:
    epsilon: str = field(default="median", metadata={"note": "a number, 'median' (of squared distances) or 'cv'"})
    t: int = field(default=1, metadata={"note": "diffusion time (ignored when epsilon = cv)"})
    m: int = field(default=3, metadata={"note": "embedding dimension"})
    cv_epsilons: tuple[float, ...] | None = field(default=None, metadata={"note": "cv grid; auto spans the 10-90th percentiles"})
    cv_ts: tuple[int, ...] = field(default=(1, 2, 3), metadata={"note": "cv grid over t"})
    cv_heldout: int = field(default=0, metadata={"note": "0 = leave-one-out over all tracks, else a random subset size"})


@dataclass
class DensitySection:
    k: int | None = field(default=None, metadata={"note": "neighbour rank for bandwidths; auto = round(sqrt(n))"})
    grid_points: int = field(default=40, metadata={"note": "points per axis of the exported density grid"})


@dataclass
class PreimageSection:
    sigmas: tuple[float, ...] | None = field(default=None, metadata={"note": "softmax temperatures, 0 = nearest-track limit; auto: 0 plus 9 log-spaced values"})
    stretches: tuple[float, ...] = field(default=DEFAULT_STRETCHES, metadata={"note": "dilation factors within [0.75, 1.5]"})
    anchors: tuple[str, ...] = field(default=ANCHORS, metadata={"note": "dilation anchors"})
    truncate: float = field(default=1e-10, metadata={"note": "weights below this are dropped"})


@dataclass
class SimulateSection:
    count: int | None = field(default=None, metadata={"note": "tracks to simulate; auto = n"})


@dataclass
class ValidationSection:
    k: int = field(default=99, metadata={"note": "null replicates"})
    alpha: float = field(default=0.05, metadata={"note": "rejection level"})
    dim_candidates: tuple[int, ...] = field(default=(2, 3, 4), metadata={"note": "dimensions tried by dim"})
    dim_sims: int = field(default=100, metadata={"note": "simulated sets per candidate dimension"})


@dataclass
class ConditionSection:
    series: str | None = field(default=None, metadata={"note": "year,value file of the conditioning variable"})
    count: int = field(default=19, metadata={"note": "years on each side of the split"})
    region: tuple[tuple[float, float], ...] = field(
        default=((2.4, 3.0), (-0.9, -0.4)), metadata={"note": "lo,hi per leading coordinate, ';' separated"}
    )
    sst: str | None = field(default=None, metadata={"note": "optional time,lon,lat,value grid"})
    cutoff_x: int = field(default=5, metadata={"note": "predictor basis cutoff"})
    cutoff_y: int = field(default=5, metadata={"note": "response basis cutoff"})


@dataclass
class SynthSection:
    n: int = field(default=608, metadata={"note": "tracks to generate"})
    center_lon: tuple[float, ...] = field(default=(-60.0, -45.0), metadata={"note": "track centre longitude range"})
    center_lat: tuple[float, ...] = field(default=(20.0, 35.0), metadata={"note": "track centre latitude range"})
    heading: tuple[float, ...] = field(default=(135.0, 135.0), metadata={"note": "direction of travel range, degrees"})
    curvature: tuple[float, ...] = field(default=(-25.0, 25.0), metadata={"note": "bend amplitude range, degrees"})
    length: float = field(default=40.0, metadata={"note": "chord length, degrees"})
    latent: str = field(default="beta", metadata={"note": "beta or uniform draws over each range"})
    jitter: float = field(default=0.0, metadata={"note": "iid noise on raw points"})
    years: tuple[int, ...] = field(default=(1950, 2005), metadata={"note": "year range"})


@dataclass
class RunSection:
    seed: int = field(default=0, metadata={"note": "master seed"})
    out: str = field(default="out", metadata={"note": "output directory"})
    jobs: int = field(default=1, metadata={"note": "worker processes; outputs do not depend on it"})


SECTIONS = {
    "input": InputSection,
    "diffusion": DiffusionSection,
    "density": DensitySection,
    "preimage": PreimageSection,
    "simulate": SimulateSection,
    "validation": ValidationSection,
    "condition": ConditionSection,
    "synth": SynthSection,
    "run": RunSection,
}


@dataclass
class PipelineConfig:
    input: InputSection = field(default_factory=InputSection)
    diffusion: DiffusionSection = field(default_factory=DiffusionSection)
    density: DensitySection = field(default_factory=DensitySection)
    preimage: PreimageSection = field(default_factory=PreimageSection)
    simulate: SimulateSection = field(default_factory=SimulateSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    condition: ConditionSection = field(default_factory=ConditionSection)
    synth: SynthSection = field(default_factory=SynthSection)
    run: RunSection = field(default_factory=RunSection)
    base_dir: Path = field(default_factory=Path.cwd, repr=False)
    source_text: str = field(default="", repr=False)

    def resolve_path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value).expanduser()
        return p if p.is_absolute() else self.base_dir / p

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()

    def canonical(self) -> str:
        """Every key that can affect outputs, with its effective value, in a fixed order.

        ``[run] out`` and ``[run] jobs`` are left out: results do not depend on them.
        """
        lines = []
        for name in SECTIONS:
            section = getattr(self, name)
            lines.append(f"[{name}]")
            lines.extend(
                f"{f.name} = {_fmt(getattr(section, f.name))}"
                for f in fields(section)
                if (name, f.name) not in (("run", "out"), ("run", "jobs"))
            )
        return "\n".join(lines) + "\n"


def _parse_section(name: str, cls, items: dict) -> object:
    hints = {f.name: str(get_type_hints(cls)[f.name]) for f in fields(cls)}
    kwargs = {}
    for key, raw in items.items():
        if key not in hints:
            raise InputError(f"[{name}] unknown key {key!r}")
        kind = hints[key].replace("typing.", "").replace("Optional[", "")
        parser = _PARSERS.get(_normalize(kind))
        if parser is None:
            raise InputError(f"[{name}] {key}: unsupported type {kind}")
        try:
            kwargs[key] = parser(raw.strip())
        except ValueError as exc:
            raise InputError(f"[{name}] {key} = {raw!r}: {exc}") from None
    return cls(**kwargs)


def _normalize(kind: str) -> str:
    aliases = {
        "<class 'str'>": "str",
        "<class 'int'>": "int",
        "<class 'float'>": "float",
        "<class 'bool'>": "bool",
        "str | NoneType": "str | None",
        "int | NoneType": "int | None",
        "float | NoneType": "float | None",
        "Union[str, NoneType]": "str | None",
        "Union[int, NoneType]": "int | None",
        "Union[float, NoneType]": "float | None",
        "Union[tuple[float, ...], NoneType]": "tuple[float, ...] | None",
        "tuple[float, ...] | NoneType": "tuple[float, ...] | None",
    }
    return aliases.get(kind, kind)


def load_config(path=None, text: str | None = None) -> PipelineConfig:
    """Read a config file (or ``text``); missing sections and keys take defaults."""
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise InputError(f"config file not found: {path}")
        text = path.read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    try:
        parser.read_string(text or "")
    except configparser.Error as exc:
        raise InputError(f"config: {exc}") from None
    unknown = [s for s in parser.sections() if s not in SECTIONS]
    if unknown:
        raise InputError(f"unknown config sections {unknown}")
    parts = {
        name: _parse_section(name, cls, dict(parser[name]) if parser.has_section(name) else {})
        for name, cls in SECTIONS.items()
    }
    base = path.resolve().parent if path is not None else Path.cwd()
    cfg = PipelineConfig(**parts, base_dir=base, source_text=text or "")
    _check(cfg)
    return cfg


def _check(cfg: PipelineConfig) -> None:
    d = cfg.diffusion
    if d.epsilon not in ("median", "cv"):
        try:
            if float(d.epsilon) <= 0:
                raise ValueError
        except ValueError:
            raise InputError(f"[diffusion] epsilon must be positive, 'median' or 'cv', got {d.epsilon!r}") from None
    if d.t < 1 or d.m < 1:
        raise InputError("[diffusion] t and m must be >= 1")
    if cfg.input.format not in ("csv", "hurdat"):
        raise InputError(f"[input] unknown format {cfg.input.format!r}")
    if cfg.validation.k < 1:
        raise InputError("[validation] k must be >= 1")
    for name in ("center_lon", "center_lat", "heading", "curvature"):
        if len(getattr(cfg.synth, name)) != 2:
            raise InputError(f"[synth] {name} needs lo,hi")
    # constructing the pre-image config checks its grids
    from .preimage import PreimageConfig

    PreimageConfig(cfg.preimage.sigmas, cfg.preimage.stretches, cfg.preimage.anchors, cfg.preimage.truncate)


def render_template() -> str:
    """Config text listing every key at its default, each with a short note."""
    defaults = PipelineConfig()
    out = ["# hdde run configuration; every key is optional.", ""]
    for name in SECTIONS:
        section = getattr(defaults, name)
        out.append(f"[{name}]")
        for f in fields(section):
            value = getattr(section, f.name)
            shown = _fmt(value) if value is not None else "auto" if "auto" in f.metadata.get("note", "") else ""
            out.append(f"# {f.metadata.get('note', '')}")
            out.append(f"{f.name} = {shown}")
        out.append("")
    return "\n".join(out)
