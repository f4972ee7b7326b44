"""Deterministic CSV result files with a '#'-prefixed key = value header."""

from __future__ import annotations

import os
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PointRingError

TOOL = f"pointring {__version__}"
SPECTRUM_COLUMNS = ("axis_name", "axis_value", "branch_id", "sector", "energy")
DERIVATIVE_COLUMNS = ("B", "branch_id", "dE_dB", "d2E_dB2")
FIELD_COLUMNS = ("x", "y", "jx", "jy", "density", "masked")


class OutputError(PointRingError, OSError):
    pass


def fmt(value) -> str:
    """17 significant digits, '.' separator, no locale; None becomes an empty field."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def render(columns, rows, header=None, digest="") -> str:
    lines = [f"# tool = {TOOL}", f"# config_digest = {digest}"]
    for key, value in (header or {}).items():
        lines.append(f"# {key} = {value if isinstance(value, str) else fmt(value)}")
    lines.append(f"# columns = {','.join(columns)}")
    lines.append(",".join(columns))
    lines.extend(",".join(fmt(v) if not isinstance(v, str) else v for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def write_atomic(path, text: str):
    """Write through a temporary file in the same directory, then rename."""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise OutputError(f"{path}: {exc.strerror or exc}") from exc
    return path


def body(text: str) -> str:
    """The CSV part of a rendered file (header comments removed)."""
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#"))


def spectrum_rows(result):
    rows = []
    for b in result.branches:
        for x, e in zip(b.axis, b.energies):
            rows.append((b.branch_id, x, e, b.sector))
    rows.sort(key=lambda r: (r[0], r[1]))
    return [(result.axis_name, x, bid, sector, e) for bid, x, e, sector in rows]


def render_spectrum(result, digest="", header=None) -> str:
    head = {"axis": result.axis_name}
    head.update({k: str(v) for k, v in result.metadata.items()})
    if result.breaks:
        head["continuation_breaks"] = str(len(result.breaks))
    head.update(header or {})
    return render(SPECTRUM_COLUMNS, spectrum_rows(result), head, digest)


def render_derivatives(table, digest="", header=None) -> str:
    rows = []
    for bid in sorted(table.rows):
        B, d1, d2 = table.rows[bid]
        rows.extend((b, bid, x, y) for b, x, y in zip(B, d1, d2))
    head = {"step": table.step}
    for bid in sorted(table.richardson):
        dev1, dev2 = table.richardson[bid]
        head[f"richardson_branch_{bid}"] = f"{fmt(dev1)} {fmt(dev2)}"
    head.update(header or {})
    return render(DERIVATIVE_COLUMNS, rows, head, digest)


def render_current_field(fld, digest="", circulation_value=None, header=None) -> str:
    g = fld.grid
    nodes = g.nodes().reshape(-1, 2)
    dens = fld.density.reshape(-1)
    cur = fld.current.reshape(-1, 2)
    mask = fld.mask.reshape(-1)
    rows = []
    for (x, y), rho, (jx, jy), m in zip(nodes, dens, cur, mask):
        if m:
            rows.append((x, y, 0.0, 0.0, 0.0, 1))
        else:
            rows.append((x, y, jx, jy, rho, 0))
    head = {"grid": f"x0={fmt(g.x0)} y0={fmt(g.y0)} h={fmt(g.h)} nx={g.nx} ny={g.ny}",
            "state": fld.label, "norm_constant": fld.norm_constant, "coverage": fld.coverage}
    if circulation_value is not None:
        head["circulation_R"] = circulation_value
    head.update(header or {})
    return render(FIELD_COLUMNS, rows, head, digest)


def emit_spectrum(result, path, digest="", header=None):
    return write_atomic(path, render_spectrum(result, digest, header))


def emit_derivatives(table, path, digest="", header=None):
    return write_atomic(path, render_derivatives(table, digest, header))


def emit_current_field(fld, path, digest="", circulation_value=None, header=None):
    return write_atomic(path, render_current_field(fld, digest, circulation_value, header))
