"""Command line: ``pointring <command> --config FILE [--out DIR] [--threads N] [--seed U64]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import experiments, results
from .config import COMMANDS, RunConfig, parse_config, with_overrides
from .errors import ConfigError, NumericalError, PointRingError
from .krein import PointArray, RingSpec, RootOptions, find_roots, ring_points, roots_in_range
from .states import GridSpec, all_boundary_values, circulation, current_grid, default_grid, make_state, sector_state

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OTHER = 0, 2, 3, 1


def root_options(cfg: RunConfig) -> RootOptions:
    return RootOptions(initial_points=cfg.initial_points, max_points=cfg.max_points,
                       root_tol=cfg.root_tol, residual_tol=cfg.residual_tol,
                       cluster_tol=cfg.cluster_tol, standoff=cfg.standoff,
                       floor_factor=cfg.floor_factor)


def geometry(cfg: RunConfig):
    if cfg.explicit_points:
        return PointArray(cfg.positions, cfg.couplings)
    return RingSpec(cfg.n_points, cfg.radius, cfg.alpha)


def _grid(cfg, points):
    if cfg.half_width is None and cfg.grid_nodes == 201:
        return default_grid(points)
    if cfg.half_width is None:
        return default_grid(points, cfg.grid_nodes)
    h = 2.0 * cfg.half_width / (cfg.grid_nodes - 1)
    return GridSpec(-cfg.half_width, -cfg.half_width, h, cfg.grid_nodes, cfg.grid_nodes)


def run_alpha_sweep(cfg):
    geo = geometry(cfg)
    if not isinstance(geo, RingSpec):
        raise ConfigError("alpha-sweep needs a clean ring (no explicit positions)")
    res = experiments.alpha_sweep(geo, cfg.b, (cfg.alpha_from, cfg.alpha_to), cfg.alpha_steps,
                                  cfg.z_hi, root_options(cfg))
    return {"spectrum.csv": results.render_spectrum(res, cfg.digest())}


def run_b_sweep(cfg):
    sweep, table = experiments.b_sweep(geometry(cfg), (cfg.b_from, cfg.b_to), cfg.steps,
                                       cfg.n_lowest, cfg.z_hi, root_options(cfg))
    head = {"richardson_consistent": "true" if table.consistent() else "false"}
    return {"spectrum.csv": results.render_spectrum(sweep, cfg.digest()),
            "derivatives.csv": results.render_derivatives(table, cfg.digest(), head)}


def run_current_field(cfg):
    geo = geometry(cfg)
    opts = root_options(cfg)
    if isinstance(geo, RingSpec):
        if cfg.sector is None:
            sector, z0 = experiments.lowest_sector(geo, cfg.b, opts)
        else:
            sector = cfg.sector
            roots = experiments.sector_roots(geo, cfg.b, gap_index=0, opts=opts)
            if sector not in roots:
                raise NumericalError(f"sector {sector} has no root below the lowest Landau level")
            z0 = roots[sector]
        state = sector_state(geo, cfg.b, z0, sector)
        loop = geo.radius
    else:
        roots = find_roots(geo, cfg.b, gap_index=0, opts=opts)
        if not roots:
            raise NumericalError("no root below the lowest Landau level")
        if roots[0].multiplicity > 1:
            raise NumericalError("lowest root is degenerate; the current is basis dependent")
        state = make_state(geo, cfg.b, roots[0].z0, label="lowest")
        loop = float(max(abs(complex(*p)) for p in geo.positions))
    loop = cfg.loop_radius or loop
    fld = current_grid(state, _grid(cfg, state.points))
    circ = circulation(fld, loop)
    head = {"B": cfg.b, "z0": state.z0, "loop_radius": loop}
    return {"current_field.csv": results.render_current_field(fld, cfg.digest(), circ, head)}


def run_disorder(cfg, threads=1):
    if cfg.explicit_points:
        raise ConfigError("disorder draws couplings on a clean ring; explicit positions not allowed")
    runs = experiments.disorder_ensemble(
        cfg.n_points, cfg.radius, cfg.delta_alpha, cfg.n_seeds, cfg.base_seed,
        (cfg.b_from, cfg.b_to), cfg.steps, cfg.circulation_b, cfg.with_sweep, threads,
        root_options(cfg))
    digest = cfg.digest()
    rows = [(r.run_index, r.seed, r.delta_alpha, r.lowest_energy, r.circulation, r.failure or "")
            for r in runs]
    head = {"delta_alpha": cfg.delta_alpha, "circulation_B": cfg.circulation_b,
            "median_abs_circulation": experiments.median_abs_circulation(runs)}
    files = {"disorder_runs.csv": results.render(
        ("run", "seed", "delta_alpha", "lowest_energy", "circulation", "failure"), rows, head, digest)}
    couplings = [(r.run_index, j, a) for r in runs for j, a in enumerate(r.couplings)]
    files["disorder_couplings.csv"] = results.render(("run", "j", "alpha_j"), couplings, {}, digest)
    for r in runs:
        if r.sweep is not None:
            files[f"spectrum_run{r.run_index:03d}.csv"] = results.render_spectrum(
                r.sweep, digest, {"run": str(r.run_index)})
    return files


def run_single_point_check(cfg):
    geo = geometry(cfg)
    points = ring_points(geo) if isinstance(geo, RingSpec) else geo
    z_hi = cfg.z_hi if cfg.z_hi is not None else abs(cfg.b)
    roots = roots_in_range(points, cfg.b, float("-inf"), z_hi, root_options(cfg))
    rows = []
    for r in roots:
        bc = ""
        if r.multiplicity == 1:
            state = make_state(points, cfg.b, r.z0)
            bc = max(bv.condition_residual(alpha)
                     for bv, alpha in zip(all_boundary_values(state), points.couplings))
        rows.append((r.gap_index, r.z0, r.multiplicity, r.residual, bc))
    head = {"B": cfg.b, "z_hi": z_hi, "n_points": str(points.n)}
    return {"roots.csv": results.render(("gap", "z0", "multiplicity", "residual", "bc_residual"),
                                        rows, head, cfg.digest())}


def execute(cfg: RunConfig, threads=1) -> dict:
    """Run one command and return {file name: text}; nothing is written here."""
    if cfg.command == "alpha-sweep":
        return run_alpha_sweep(cfg)
    if cfg.command == "b-sweep":
        return run_b_sweep(cfg)
    if cfg.command == "current-field":
        return run_current_field(cfg)
    if cfg.command == "disorder":
        return run_disorder(cfg, threads)
    return run_single_point_check(cfg)


def build_parser():
    p = argparse.ArgumentParser(prog="pointring", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, default=Path("."))
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help="overrides base_seed")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        try:
            text = args.config.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"{args.config}: {exc.strerror or exc}") from None
        cfg = parse_config(text, args.command)
        if args.seed is not None:
            cfg = with_overrides(cfg, base_seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        files = execute(cfg, args.threads)
        for name, content in files.items():
            results.write_atomic(args.out / name, content)
    except ConfigError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except PointRingError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_OTHER
    for name in files:
        print(args.out / name)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
