"""Sweeps over coupling and field, derivative tables, disorder ensembles."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ContinuationError, NumericalError, ValidationError
from .krein import (DEFAULT_OPTIONS, PointArray, RingSpec, RootOptions, find_roots,
                    gap_below, gap_bounds, ring_points, sector_roots)
from .states import circulation, current_grid, make_state, sector_state

JUMP_FACTOR = 5.0
RICHARDSON_TOL = 1e-4


@dataclass(frozen=True)
class IdealRingSpec:
    circumference: float
    flux: float
    level: int

    def __post_init__(self):
        if not self.circumference > 0:
            raise ValidationError("circumference", "> 0")


def ideal_ring_energy(spec: IdealRingSpec) -> float:
    """(2 pi / L)^2 (j + phi)^2 with 2m* = hbar = 1."""
    return (2.0 * math.pi / spec.circumference) ** 2 * (spec.level + spec.flux) ** 2


@dataclass
class Branch:
    branch_id: int
    sector: int | None
    gap: int
    axis: list = field(default_factory=list)
    energies: list = field(default_factory=list)


@dataclass
class SweepResult:
    axis_name: str
    axis: np.ndarray
    branches: list
    metadata: dict = field(default_factory=dict)
    breaks: list = field(default_factory=list)

    def branch(self, branch_id) -> Branch:
        for b in self.branches:
            if b.branch_id == branch_id:
                return b
        raise KeyError(branch_id)


@dataclass
class DerivativeTable:
    step: float
    rows: dict                      # branch_id -> (B, dE/dB, d2E/dB2) arrays
    richardson: dict                # branch_id -> (dE deviation, d2E deviation) relative to max

    def consistent(self, tol=RICHARDSON_TOL) -> bool:
        return all(dev_1 <= tol and dev_2 <= tol for dev_1, dev_2 in self.richardson.values())


# --------------------------------------------------------------------------
# root collection per axis point


def _sector_levels(spec: RingSpec, B, z_hi, opts, enough=None):
    """{(gap, sector): z0} for roots below z_hi, gap by gap until ``enough`` are found."""
    out = {}
    for gap in range(0, gap_below(B, z_hi) + 1):
        if enough is not None and len(out) >= enough:
            break
        lower, upper = gap_bounds(B, gap)
        window = (lower, min(upper, z_hi))
        for k, z0 in sector_roots(spec, B, window, gap_index=gap, opts=opts).items():
            out[(gap, k)] = z0
    return out


def _sorted_levels(points: PointArray, B, z_hi, opts, enough=None):
    """[(gap, index, z0)] with degenerate roots repeated by multiplicity."""
    out = []
    for gap in range(0, gap_below(B, z_hi) + 1):
        if enough is not None and len(out) >= enough:
            break
        lower, upper = gap_bounds(B, gap)
        roots = find_roots(points, B, (lower, min(upper, z_hi)), gap_index=gap, opts=opts)
        i = 0
        for r in roots:
            for _ in range(r.multiplicity):
                out.append((gap, i, r.z0))
                i += 1
    return out


def _split_jumps(branches, cluster_tol, breaks, next_id):
    """Cut branches where one step exceeds JUMP_FACTOR x the local median increment."""
    out = []
    for b in branches:
        e = np.array(b.energies)
        cuts = []
        if len(e) >= 4:
            inc = np.abs(np.diff(e))
            for i in range(len(inc)):
                # immediate neighbours only: branches like exp(-4 pi alpha) grow geometrically
                nb = np.concatenate([inc[max(0, i - 1):i], inc[i + 1:i + 2]])
                if len(nb) and inc[i] > max(JUMP_FACTOR * np.median(nb), cluster_tol):
                    cuts.append(i + 1)
        if not cuts:
            out.append(b)
            continue
        edges = [0] + cuts + [len(e)]
        for s, t in zip(edges[:-1], edges[1:]):
            bid = b.branch_id if s == 0 else next_id()
            out.append(Branch(bid, b.sector, b.gap, b.axis[s:t], b.energies[s:t]))
        breaks.append(str(ContinuationError(
            f"branch {b.branch_id} split at axis values {[b.axis[c] for c in cuts]}")))
    return out


def _contiguous(branch: Branch, axis):
    """Split a branch whose axis values skip grid points (root left the window)."""
    idx = np.searchsorted(axis, branch.axis)
    pieces, start = [], 0
    for i in range(1, len(idx) + 1):
        if i == len(idx) or idx[i] != idx[i - 1] + 1:
            pieces.append((start, i))
            start = i
    return pieces


class _Ids:
    def __init__(self, start):
        self.n = start

    def __call__(self):
        self.n += 1
        return self.n


def _assemble_branches(axis, per_point, key_order, cluster_tol):
    """per_point: list over axis of {key: (gap, sector, energy)}; keys become branches."""
    table = {}
    for x, levels in zip(axis, per_point):
        for key, (gap, sector, z0) in levels.items():
            table.setdefault(key, Branch(0, sector, gap)).axis.append(float(x))
            table[key].energies.append(float(z0))
    ordered = sorted(table.items(), key=lambda kv: key_order(kv[0]))
    branches, breaks = [], []
    ids = _Ids(len(ordered) - 1)
    for bid, (_, b) in enumerate(ordered):
        for n, (s, t) in enumerate(_contiguous(b, np.asarray(axis))):
            branches.append(Branch(bid if n == 0 else ids(), b.sector, b.gap,
                                   b.axis[s:t], b.energies[s:t]))
    branches = _split_jumps(branches, cluster_tol, breaks, ids)
    branches.sort(key=lambda b: b.branch_id)
    return branches, breaks


def _ambiguous_steps(per_point, cluster_tol):
    """Sorted-index keys whose neighbours come within the cluster tolerance without merging."""
    flagged = set()
    for levels in per_point:
        items = sorted(levels.items(), key=lambda kv: kv[1][2])
        for (k1, v1), (k2, v2) in zip(items, items[1:]):
            gap = v2[2] - v1[2]
            if 0.0 < gap < cluster_tol:
                flagged.update([k1, k2])
    return flagged


# --------------------------------------------------------------------------
# sweeps


def alpha_sweep(spec: RingSpec, B=1.0, alpha_range=(-1.4, -0.6), steps=81, z_hi=None,
                opts: RootOptions = DEFAULT_OPTIONS) -> SweepResult:
    """Roots against the common coupling, continued by rotation sector."""
    if steps < 2:
        raise ValidationError("steps", ">= 2")
    axis = np.linspace(alpha_range[0], alpha_range[1], steps)
    z_hi = 3.0 * abs(B) if z_hi is None else z_hi
    per_point = []
    for alpha in axis:
        s = RingSpec(spec.n_points, spec.radius, float(alpha))
        levels = _sector_levels(s, B, z_hi, opts)
        per_point.append({key: (key[0], key[1], z0) for key, z0 in levels.items()})
    branches, breaks = _assemble_branches(axis, per_point, lambda key: key, opts.cluster_tol)
    meta = {"n_points": spec.n_points, "radius": spec.radius, "B": B}
    return SweepResult("alpha", axis, branches, meta, breaks)


def _b_levels(geometry, B, z_hi, opts, enough=None):
    if isinstance(geometry, RingSpec):
        levels = _sector_levels(geometry, B, z_hi, opts, enough)
        return {key: (key[0], key[1], z0) for key, z0 in levels.items()}
    return {(g, i): (g, None, z0) for g, i, z0 in _sorted_levels(geometry, B, z_hi, opts, enough)}


def _lowest_keys(per_point, n_lowest, cluster_tol):
    """Branch keys ranked by mean energy; near-ties go to the smaller key (sector)."""
    sums, counts = {}, {}
    for levels in per_point:
        for key, (_, _, z0) in levels.items():
            sums[key] = sums.get(key, 0.0) + z0
            counts[key] = counts.get(key, 0) + 1
    full = [k for k in sums if counts[k] == len(per_point)]
    means = {k: sums[k] / counts[k] for k in full}
    ranked = sorted(full, key=lambda k: means[k])
    out = []
    while ranked and len(out) < n_lowest:
        base = means[ranked[0]]
        tie = [k for k in ranked if means[k] - base <= cluster_tol * max(1.0, abs(base))]
        pick = min(tie)
        out.append(pick)
        ranked.remove(pick)
    return out


def b_sweep(geometry, B_range=(0.5, 2.0), steps=61, n_lowest=1, z_hi=None,
            opts: RootOptions = DEFAULT_OPTIONS, richardson=True):
    """Lowest branches against B with central-difference derivatives.

    ``geometry`` is a RingSpec (sector continuation) or a PointArray
    (continuation by sorted index inside each gap).
    """
    if steps < 8:
        raise ValidationError("steps", ">= 8")
    lo, hi = B_range
    if lo <= 0.0 <= hi:
        raise ValidationError("B_range", "must exclude 0")
    axis = np.linspace(lo, hi, steps)
    h = float(axis[1] - axis[0])

    def z_top(B):
        return 3.0 * abs(B) if z_hi is None else z_hi

    per_point = [_b_levels(geometry, float(B), z_top(B), opts, n_lowest) for B in axis]
    keep = _lowest_keys(per_point, n_lowest, opts.cluster_tol)
    breaks = []
    if not isinstance(geometry, RingSpec):
        bad = _ambiguous_steps(per_point, opts.cluster_tol)
        for key in sorted(set(keep) & bad):
            breaks.append(str(ContinuationError(f"branch {key} passes within the cluster tolerance of a neighbour")))
    trimmed = [{k: v for k, v in levels.items() if k in keep} for levels in per_point]
    rank = {k: i for i, k in enumerate(keep)}
    branches, split = _assemble_branches(axis, trimmed, lambda key: rank[key], opts.cluster_tol)
    breaks.extend(split)

    rows, checks = {}, {}
    for b in branches:
        e = np.array(b.energies)
        if len(e) < 3:
            continue
        x = np.array(b.axis)
        d1 = (e[2:] - e[:-2]) / (2.0 * h)
        d2 = (e[2:] - 2.0 * e[1:-1] + e[:-2]) / (h * h)
        rows[b.branch_id] = (x[1:-1], d1, d2)
        if richardson:
            key = keep[b.branch_id] if b.branch_id < len(keep) else None
            if key is None:
                continue
            mids = []
            for B in x[1:-1]:
                pair = []
                for Bs in (B - 0.5 * h, B + 0.5 * h):
                    lv = _b_levels(geometry, float(Bs), z_top(Bs), opts, n_lowest)
                    if key not in lv:
                        raise ContinuationError(f"branch {key} missing at B={Bs!r} in the Richardson check")
                    pair.append(lv[key][2])
                mids.append(pair)
            mids = np.array(mids)
            d1_half = (mids[:, 1] - mids[:, 0]) / h
            d2_half = (mids[:, 1] - 2.0 * e[1:-1] + mids[:, 0]) / (0.25 * h * h)
            dev1 = float(np.max(np.abs(d1_half - d1)) / max(np.max(np.abs(d1)), 1e-300))
            dev2 = float(np.max(np.abs(d2_half - d2)) / max(np.max(np.abs(d2)), 1e-300))
            checks[b.branch_id] = (dev1, dev2)
    meta = {"geometry": _describe(geometry), "B_range": (lo, hi), "steps": steps}
    sweep = SweepResult("B", axis, branches, meta, breaks)
    return sweep, DerivativeTable(h, rows, checks)


def _describe(geometry):
    if isinstance(geometry, RingSpec):
        return f"ring N={geometry.n_points} R={geometry.radius!r} alpha={geometry.alpha!r}"
    return f"points digest={geometry.digest()}"


def sign_consistency(B, dE_dB, circulations, tol=0.0):
    """True if circulation has one sign where dE/dB < 0 and the opposite where dE/dB > 0."""
    dE_dB, circ = np.asarray(dE_dB), np.asarray(circulations)
    neg, pos = dE_dB < -tol, dE_dB > tol
    s_neg = set(np.sign(circ[neg]).tolist())
    s_pos = set(np.sign(circ[pos]).tolist())
    if 0.0 in s_neg | s_pos or len(s_neg) > 1 or len(s_pos) > 1:
        return False
    return not (s_neg and s_pos) or s_neg != s_pos


# --------------------------------------------------------------------------
# clean-ring states


def lowest_sector(spec: RingSpec, B, opts: RootOptions = DEFAULT_OPTIONS):
    """(sector, z0) of the lowest root; within the cluster tolerance the smallest sector wins."""
    roots = sector_roots(spec, B, gap_index=0, opts=opts)
    if not roots:
        raise NumericalError(f"no root below the lowest Landau level at B={B!r}")
    base = min(roots.values())
    tie = [k for k, z in roots.items() if z - base <= opts.cluster_tol * max(1.0, abs(base))]
    k = min(tie)
    return k, roots[k]


def clean_circulation(spec: RingSpec, B, sector=None, grid=None, loop_radius=None,
                      opts: RootOptions = DEFAULT_OPTIONS):
    if sector is None:
        sector, z0 = lowest_sector(spec, B, opts)
    else:
        z0 = sector_roots(spec, B, gap_index=0, opts=opts)[sector]
    state = sector_state(spec, B, z0, sector)
    fld = current_grid(state, grid)
    return circulation(fld, spec.radius if loop_radius is None else loop_radius), state, fld


# --------------------------------------------------------------------------
# disorder


@dataclass
class DisorderRun:
    seed: int
    run_index: int
    delta_alpha: float
    couplings: np.ndarray
    sweep: SweepResult | None = None
    lowest_energy: float | None = None
    circulation: float | None = None
    failure: str | None = None


def realized_couplings(base_seed: int, run_index: int, n_points: int, delta_alpha: float,
                       center=-1.0) -> np.ndarray:
    """center + Uniform[-delta, delta] per obstacle from a Philox stream keyed by (seed, run)."""
    if delta_alpha < 0:
        raise ValidationError("delta_alpha", ">= 0")
    key = np.random.SeedSequence([int(base_seed), int(run_index)])
    rng = np.random.Generator(np.random.Philox(key))
    u = rng.uniform(-delta_alpha, delta_alpha, n_points)
    return center + u


def _one_run(args):
    (base_seed, run, n_points, radius, delta_alpha, B_range, steps, circulation_B,
     with_sweep, opts) = args
    couplings = realized_couplings(base_seed, run, n_points, delta_alpha)
    out = DisorderRun(int(base_seed), run, float(delta_alpha), couplings)
    geometry = ring_points(RingSpec(n_points, radius, -1.0)).with_couplings(couplings)
    try:
        if with_sweep:
            out.sweep, _ = b_sweep(geometry, B_range, steps, 1, opts=opts, richardson=False)
        roots = find_roots(geometry, circulation_B, gap_index=0, opts=opts)
        if not roots:
            raise NumericalError("no bound state below the lowest Landau level")
        low = roots[0]
        out.lowest_energy = low.z0
        if low.multiplicity > 1:
            raise NumericalError(f"lowest root is {low.multiplicity}-fold degenerate; current is basis dependent")
        state = make_state(geometry, circulation_B, low.z0, label="lowest")
        out.circulation = circulation(current_grid(state), radius)
    except NumericalError as exc:
        out.failure = f"{type(exc).__name__}: {exc}"
    return out


def disorder_ensemble(n_points=12, radius=1.0, delta_alpha=0.01, n_seeds=16, base_seed=0,
                      B_range=(0.5, 2.0), steps=61, circulation_B=0.5, with_sweep=True,
                      threads=1, opts: RootOptions = DEFAULT_OPTIONS) -> list[DisorderRun]:
    """Independent runs with couplings -1 + U[-delta, delta]; ordered by run index."""
    if delta_alpha < 0:
        raise ValidationError("delta_alpha", ">= 0")
    jobs = [(base_seed, run, n_points, radius, delta_alpha, B_range, steps, circulation_B,
             with_sweep, opts) for run in range(n_seeds)]
    if threads <= 1:
        return [_one_run(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one_run, jobs))


def median_abs_circulation(runs) -> float:
    vals = [abs(r.circulation) for r in runs if r.circulation is not None]
    return float(np.median(vals)) if vals else math.nan
