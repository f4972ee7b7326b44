"""Run configuration: a flat ``key = value`` file with optional ``[section]`` headers.

Keys live in one namespace; sections only group them. Every key is known in
advance, unknown keys are refused, and all values are validated before any
computation starts.
"""

from __future__ import annotations

import configparser
import hashlib
import math
import re
from dataclasses import dataclass, fields, replace

from .errors import ParseError, ValidationError

COMMANDS = ("alpha-sweep", "b-sweep", "current-field", "disorder", "single-point-check")
SECTIONS = ("run", "geometry", "field", "sweep", "window", "grid", "disorder", "tolerances")
ALIASES = {"np": "n_points"}
_ROOT = "run"


def _floats(text):
    return tuple(float(v) for v in re.split(r"[,\s]+", text.strip()) if v)


def _points(text):
    out = []
    for chunk in text.split(";"):
        if chunk.strip():
            xy = _floats(chunk)
            if len(xy) != 2:
                raise ValueError(f"expected 'x y', got {chunk.strip()!r}")
            out.append(xy)
    return tuple(out)


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional_float(text):
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


def _optional_int(text):
    return None if text.strip().lower() in ("", "auto", "none", "lowest") else int(text)


@dataclass(frozen=True)
class RunConfig:
    command: str = "b-sweep"
    # geometry: a clean ring unless explicit positions are given
    n_points: int = 12
    radius: float = 1.0
    alpha: float = -1.0
    positions: tuple = ()
    couplings: tuple = ()
    # field and sweeps
    b: float = 1.0
    b_from: float = 0.5
    b_to: float = 2.0
    steps: int = 61
    n_lowest: int = 1
    alpha_from: float = -1.4
    alpha_to: float = -0.6
    alpha_steps: int = 81
    z_hi: float | None = None
    # current fields
    grid_nodes: int = 201
    half_width: float | None = None
    loop_radius: float | None = None
    sector: int | None = None
    # disorder
    delta_alpha: float = 0.01
    n_seeds: int = 16
    base_seed: int = 0
    circulation_b: float = 0.5
    with_sweep: bool = True
    # root search
    initial_points: int = 64
    max_points: int = 16384
    root_tol: float = 1e-10
    residual_tol: float = 1e-9
    cluster_tol: float = 1e-8
    standoff: float = 1e-6
    floor_factor: float = 40.0

    @property
    def explicit_points(self) -> bool:
        return bool(self.positions)

    def serialize(self) -> str:
        lines = []
        for section, names in _LAYOUT.items():
            lines.append(f"[{section}]")
            for name in names:
                lines.append(f"{name} = {_format(getattr(self, name))}")
            lines.append("")
        return "\n".join(lines)

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()


_LAYOUT = {
    "run": ("command",),
    "geometry": ("n_points", "radius", "alpha", "positions", "couplings"),
    "field": ("b",),
    "sweep": ("b_from", "b_to", "steps", "n_lowest", "alpha_from", "alpha_to", "alpha_steps"),
    "window": ("z_hi",),
    "grid": ("grid_nodes", "half_width", "loop_radius", "sector"),
    "disorder": ("delta_alpha", "n_seeds", "base_seed", "circulation_b", "with_sweep"),
    "tolerances": ("initial_points", "max_points", "root_tol", "residual_tol", "cluster_tol",
                   "standoff", "floor_factor"),
}

_CONVERT = {
    "command": str, "n_points": int, "radius": float, "alpha": float,
    "positions": _points, "couplings": _floats, "b": float, "b_from": float, "b_to": float,
    "steps": int, "n_lowest": int, "alpha_from": float, "alpha_to": float, "alpha_steps": int,
    "z_hi": _optional_float, "grid_nodes": int, "half_width": _optional_float,
    "loop_radius": _optional_float, "sector": _optional_int, "delta_alpha": float,
    "n_seeds": int, "base_seed": int, "circulation_b": float, "with_sweep": _bool,
    "initial_points": int, "max_points": int, "root_tol": float, "residual_tol": float,
    "cluster_tol": float, "standoff": float, "floor_factor": float,
}
assert set(_CONVERT) == {f.name for f in fields(RunConfig)}


def _format(value) -> str:
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(repr(float(c)) for c in p) for p in value)
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def _key_lines(text):
    """Line number of every key, for diagnostics configparser does not keep."""
    where = {}
    for number, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*([A-Za-z_][\w\-]*)\s*[=:]", line)
        if m and not line.lstrip().startswith(("#", ";")):
            where.setdefault(m.group(1).lower(), number)
    return where


def parse_config(text: str, command: str | None = None) -> RunConfig:
    """Parse and validate; ``command`` (from the command line) must agree with the file if both are set."""
    body = text
    first = next((ln.strip() for ln in text.splitlines() if ln.strip() and not ln.strip().startswith(("#", ";"))), "")
    offset = 0
    if not first.startswith("["):
        body = f"[{_ROOT}]\n" + text
        offset = 1
    parser = configparser.ConfigParser(interpolation=None, strict=True,
                                       comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
    parser.optionxform = str.lower
    try:
        parser.read_string(body)
    except configparser.DuplicateOptionError as exc:
        raise ParseError(f"duplicate key {exc.option!r}", exc.lineno - offset) from None
    except configparser.DuplicateSectionError as exc:
        raise ParseError(f"duplicate section {exc.section!r}", exc.lineno - offset) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ParseError("missing section header", exc.lineno - offset) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ParseError(f"cannot parse {line.strip()!r}", lineno - offset) from None

    lines = _key_lines(text)
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ParseError(f"unknown section [{section}]")
        for raw_key, raw in parser.items(section):
            key = ALIASES.get(raw_key, raw_key)
            if key not in _CONVERT:
                raise ParseError(f"unknown key {raw_key!r}", lines.get(raw_key))
            if key in values:
                raise ParseError(f"key {key!r} given twice", lines.get(raw_key))
            try:
                values[key] = _CONVERT[key](raw)
            except ValueError as exc:
                raise ParseError(f"bad value for {raw_key!r}: {exc}", lines.get(raw_key)) from None
    if command is not None:
        if "command" in values and values["command"] != command:
            raise ValidationError("command", f"file says {values['command']!r}, command line says {command!r}")
        values["command"] = command
    cfg = RunConfig(**values)
    validate(cfg)
    return cfg


def _require(ok, name, constraint):
    if not ok:
        raise ValidationError(name, constraint)


def _finite(x):
    return x is not None and math.isfinite(x)


def validate(cfg: RunConfig) -> RunConfig:
    _require(cfg.command in COMMANDS, "command", f"one of {', '.join(COMMANDS)}")
    _require(cfg.n_points >= 1, "n_points", ">= 1")
    _require(_finite(cfg.radius) and cfg.radius > 0, "radius", "> 0")
    _require(_finite(cfg.alpha), "alpha", "finite")
    if cfg.positions or cfg.couplings:
        _require(len(cfg.positions) >= 1, "positions", "at least one point")
        _require(len(cfg.positions) == len(cfg.couplings), "couplings", "same length as positions")
        _require(all(_finite(c) for p in cfg.positions for c in p), "positions", "finite")
        _require(all(_finite(c) for c in cfg.couplings), "couplings", "finite")
        pts = cfg.positions
        for i in range(len(pts)):
            for j in range(i):
                _require(math.dist(pts[i], pts[j]) > 1e-10, "positions", "pairwise distance > 1e-10")
    _require(_finite(cfg.b) and cfg.b != 0, "b", "finite and nonzero")
    _require(_finite(cfg.b_from) and _finite(cfg.b_to) and cfg.b_from < cfg.b_to, "b_from", "< b_to")
    _require(not (cfg.b_from <= 0 <= cfg.b_to), "b_from", "B range must exclude 0")
    _require(cfg.steps >= 8, "steps", ">= 8")
    _require(cfg.n_lowest >= 1, "n_lowest", ">= 1")
    _require(_finite(cfg.alpha_from) and _finite(cfg.alpha_to) and cfg.alpha_from < cfg.alpha_to,
             "alpha_from", "< alpha_to")
    _require(cfg.alpha_steps >= 2, "alpha_steps", ">= 2")
    _require(cfg.z_hi is None or _finite(cfg.z_hi), "z_hi", "finite or auto")
    _require(cfg.grid_nodes >= 3, "grid_nodes", ">= 3")
    _require(cfg.half_width is None or (_finite(cfg.half_width) and cfg.half_width > 0),
             "half_width", "> 0 or auto")
    _require(cfg.loop_radius is None or (_finite(cfg.loop_radius) and cfg.loop_radius > 0),
             "loop_radius", "> 0 or auto")
    _require(cfg.sector is None or 0 <= cfg.sector < cfg.n_points, "sector", "in [0, n_points)")
    _require(_finite(cfg.delta_alpha) and cfg.delta_alpha >= 0, "delta_alpha", ">= 0")
    _require(cfg.n_seeds >= 1, "n_seeds", ">= 1")
    _require(0 <= cfg.base_seed < 2 ** 64, "base_seed", "unsigned 64-bit")
    _require(_finite(cfg.circulation_b) and cfg.circulation_b != 0, "circulation_b", "finite and nonzero")
    _require(cfg.initial_points >= 2, "initial_points", ">= 2")
    _require(cfg.max_points >= cfg.initial_points, "max_points", ">= initial_points")
    for name in ("root_tol", "residual_tol", "cluster_tol", "standoff", "floor_factor"):
        value = getattr(cfg, name)
        _require(_finite(value) and value > 0, name, "> 0")
    return cfg


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    return validate(replace(cfg, **{k: v for k, v in changes.items() if v is not None}))
