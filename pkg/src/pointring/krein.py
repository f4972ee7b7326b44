"""Krein matrix Lambda(z) for N point obstacles and the roots of det Lambda = 0.

Lambda_jj = alpha_j - xi(B; z), Lambda_jm = -G(a_j, a_m; z). For real z off the
Landau levels the matrix is Hermitian and dLambda/dz is negative definite, so
every sorted eigenvalue is a strictly decreasing function of z inside a gap.
"""

from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ScanResolutionError, ValidationError, WindowError
from .green import FOUR_PI, FieldPoint, _constants, green_kernel, landau_level

MIN_SEPARATION = 1e-10


@dataclass(frozen=True, eq=False)
class PointArray:
    positions: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        cpl = np.array(self.couplings, dtype=float).reshape(-1)
        if len(pos) < 1:
            raise ValidationError("positions", "at least one obstacle")
        if len(pos) != len(cpl):
            raise ValidationError("couplings", f"length {len(cpl)} != {len(pos)} positions")
        if not (np.isfinite(pos).all() and np.isfinite(cpl).all()):
            raise ValidationError("positions/couplings", "finite values")
        if len(pos) > 1:
            diff = pos[:, None, :] - pos[None, :, :]
            dist = np.hypot(diff[..., 0], diff[..., 1])
            np.fill_diagonal(dist, np.inf)
            if dist.min() <= MIN_SEPARATION:
                raise ValidationError("positions", f"pairwise distance > {MIN_SEPARATION}")
        pos.setflags(write=False)
        cpl.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "couplings", cpl)

    @property
    def n(self) -> int:
        return len(self.couplings)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.positions, dtype="<f8").tobytes())
        h.update(np.ascontiguousarray(self.couplings, dtype="<f8").tobytes())
        return h.hexdigest()

    def nearest_spacing(self) -> float:
        if self.n == 1:
            return math.inf
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1])
        np.fill_diagonal(dist, np.inf)
        return float(dist.min())

    def with_couplings(self, couplings) -> "PointArray":
        return PointArray(self.positions, couplings)


@dataclass(frozen=True)
class RingSpec:
    n_points: int
    radius: float
    alpha: float

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 1:
            raise ValidationError("n_points", ">= 1")
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValidationError("radius", "> 0")
        if not math.isfinite(self.alpha):
            raise ValidationError("alpha", "finite")


def ring_points(spec: RingSpec) -> PointArray:
    """Obstacles at R(cos 2 pi j/N, sin 2 pi j/N), j = 1..N."""
    j = np.arange(1, spec.n_points + 1)
    angle = 2.0 * np.pi * j / spec.n_points
    pos = spec.radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    return PointArray(pos, np.full(spec.n_points, float(spec.alpha)))


def alpha_from_radius(rho: float) -> float:
    """Coupling reproducing scattering length rho."""
    if not rho > 0:
        raise DomainError(f"scattering length must be positive, got {rho!r}")
    return math.log(rho) / (2.0 * math.pi)


def scale_system(points: PointArray, B: float, s: float):
    """Dilate by s: same spectrum times s**-2."""
    if not s > 0:
        raise DomainError(f"scale factor must be positive, got {s!r}")
    scaled = PointArray(points.positions * s, points.couplings + math.log(s) / (2.0 * math.pi))
    return scaled, B / (s * s)


# --------------------------------------------------------------------------
# matrix assembly


@dataclass(frozen=True, eq=False)
class LambdaMatrix:
    entries: np.ndarray
    fp: FieldPoint
    config_digest: str
    scale: float

    @property
    def n(self):
        return self.entries.shape[0]


def _offdiagonal(positions, B, z):
    n = len(positions)
    iu, ju = np.triu_indices(n, 1)
    out = np.zeros((n, n), dtype=complex)
    if len(iu):
        vals = green_kernel(positions[iu], positions[ju], B, z)
        out[iu, ju] = -vals
        out[ju, iu] = -np.conj(vals)
    return out


def _assemble(points: PointArray, B, z):
    _, xi_value = _constants(float(B), float(z))
    mat = _offdiagonal(points.positions, B, z)
    mat[np.diag_indices(points.n)] = points.couplings - xi_value
    off = np.abs(mat - np.diag(np.diag(mat)))
    # 1/(4 pi) floors the scale when alpha = xi = 0 at a lone obstacle
    scale = max(float(np.max(np.abs(points.couplings))), abs(xi_value), float(off.max()),
                1.0 / FOUR_PI)
    return mat, scale


def build_lambda(points: PointArray, fp: FieldPoint) -> LambdaMatrix:
    fp.check_off_landau()
    mat, scale = _assemble(points, fp.B, fp.z)
    return LambdaMatrix(mat, fp, points.digest(), scale)


def lambda_derivative(points: PointArray, B, z):
    """dLambda/dz by Richardson-extrapolated central differences."""
    n = max(0, math.floor((z / abs(B) + 1.0) / 2.0))
    dist = min(abs(z - landau_level(B, n)), abs(z - landau_level(B, n - 1)) if n > 0 else math.inf)
    h = 1e-2 * min(dist, max(1.0, abs(z)))

    def cd(step):
        return (_assemble(points, B, z + step)[0] - _assemble(points, B, z - step)[0]) / (2 * step)

    return (4.0 * cd(h / 2) - cd(h)) / 3.0


# --------------------------------------------------------------------------
# root search


@dataclass(frozen=True)
class RootOptions:
    initial_points: int = 64
    max_points: int = 2 ** 14
    root_tol: float = 1e-10
    residual_tol: float = 1e-9
    cluster_tol: float = 1e-8
    standoff: float = 1e-6
    floor_factor: float = 40.0
    increment_fraction: float = 0.25
    min_overlap: float = 0.5
    max_floor_doublings: int = 60


DEFAULT_OPTIONS = RootOptions()


@dataclass(frozen=True)
class SpectralRoot:
    z0: float
    multiplicity: int
    gap_index: int
    residual: float
    sector: int | None = None
    sectors: tuple = field(default=())


def gap_index_of(B, z) -> int:
    return max(0, math.floor((z / abs(B) + 1.0) / 2.0))


def gap_below(B, z) -> int:
    """Gap holding the points just below z (a level belongs to the gap under it)."""
    n = gap_index_of(B, z)
    if n > 0 and z <= landau_level(B, n - 1):
        n -= 1
    return n


def gap_bounds(B, n):
    """Open interval between Landau levels n-1 and n (n=0 is unbounded below)."""
    lower = -math.inf if n == 0 else landau_level(B, n - 1)
    return lower, landau_level(B, n)


def _lowest_eig(points, B, z):
    return np.linalg.eigvalsh(_assemble(points, B, z)[0])[0]


def _auto_floor(lowest, B, opts):
    absb = abs(B)
    floor = absb - opts.floor_factor * absb
    for _ in range(opts.max_floor_doublings):
        if lowest(floor) > 0:
            return floor
        floor = absb - 2.0 * (absb - floor)
    raise WindowError("search floor could not be pushed below the lowest root")


def resolve_window(B, window=None, gap_index=None, opts=DEFAULT_OPTIONS, lowest=None):
    """(gap, lo, hi) with Landau standoff applied and the floor resolved."""
    if window is None:
        if gap_index is None:
            gap_index = 0
        lower, upper = gap_bounds(B, gap_index)
        lo, hi = lower, upper
    else:
        lo, hi = float(window[0]), float(window[1])
        if not lo < hi:
            raise WindowError(f"empty window ({lo}, {hi})")
        n = gap_index_of(B, 0.5 * (lo + hi)) if math.isfinite(lo) else gap_below(B, hi)
        lower, upper = gap_bounds(B, n)
        if gap_index is not None and gap_index != n:
            raise WindowError(f"window ({lo}, {hi}) is not inside gap {gap_index}")
        if lo < lower or hi > upper:
            raise WindowError(f"window ({lo}, {hi}) straddles a Landau level")
        gap_index = n
    margin = opts.standoff * abs(B)
    if math.isfinite(lower):
        lo = max(lo, lower + margin)
    hi = min(hi, upper - margin)
    if not math.isfinite(lo):
        if lowest is None:
            raise WindowError("unbounded window needs a floor probe")
        lo = _auto_floor(lowest, B, opts)
    if not lo < hi:
        raise WindowError(f"window collapses after Landau standoff: ({lo}, {hi})")
    return gap_index, lo, hi


class _Coordinate:
    """Scan coordinate: log distance to the upper level in gap 0, logit inside higher gaps."""

    def __init__(self, B, gap):
        self.lower, self.upper = gap_bounds(B, gap)

    def to_u(self, z):
        if math.isinf(self.lower):
            return -math.log(self.upper - z)
        t = (z - self.lower) / (self.upper - self.lower)
        return math.log(t) - math.log1p(-t)

    def to_z(self, u):
        u = np.asarray(u, dtype=float)
        if math.isinf(self.lower):
            return self.upper - np.exp(-u)
        t = 0.5 * (1.0 + np.tanh(0.5 * u))
        return self.lower + (self.upper - self.lower) * t


def _clusters(values, tol):
    groups, start = [], 0
    for i in range(1, len(values) + 1):
        if i == len(values) or values[i] - values[i - 1] > tol:
            groups.append(list(range(start, i)))
            start = i
    return groups


def _ambiguous(vals_a, vecs_a, vals_b, vecs_b, tol, min_overlap):
    """True if some eigenvector at one end has no dominant eigenspace at the other."""
    groups = _clusters(vals_b, tol)
    weights = np.abs(vecs_b.conj().T @ vecs_a) ** 2
    captured = np.array([weights[g].sum(axis=0) for g in groups])
    return bool((captured.max(axis=0) < min_overlap).any())


def _scan(points, B, coord, u_lo, u_hi, opts):
    us = list(np.linspace(u_lo, u_hi, opts.initial_points))
    cache = {}

    def sample(u):
        if u not in cache:
            z = float(coord.to_z(u))
            mat, scale = _assemble(points, B, z)
            w, v = np.linalg.eigh(mat)
            cache[u] = (z, w, v, scale)
        return cache[u]

    while True:
        data = [sample(u) for u in us]
        vals = np.array([d[1] for d in data])
        span = vals.max(axis=0) - vals.min(axis=0)
        steps = np.abs(np.diff(vals, axis=0))
        coarse = (steps > opts.increment_fraction * span[None, :]).any(axis=1)
        ambiguous = np.zeros(len(us) - 1, dtype=bool)
        for i in range(len(us) - 1):
            za, wa, va, sa = data[i]
            _, wb, vb, sb = data[i + 1]
            tol = max(opts.cluster_tol, 1e3 * np.finfo(float).eps * max(sa, sb))
            ambiguous[i] = _ambiguous(wa, va, wb, vb, tol, opts.min_overlap)
        flagged = coarse | ambiguous
        if not flagged.any():
            break
        if len(us) + int(flagged.sum()) > opts.max_points:
            if ambiguous.any():
                i = int(np.flatnonzero(ambiguous)[0])
                raise ScanResolutionError(
                    f"eigenvector overlap below {opts.min_overlap} between "
                    f"z={data[i][0]!r} and z={data[i + 1][0]!r} at the scan cap")
            break
        refined = []
        for i in range(len(us) - 1):
            refined.append(us[i])
            if flagged[i]:
                refined.append(0.5 * (us[i] + us[i + 1]))
        refined.append(us[-1])
        us = refined
    return np.array([d[0] for d in data]), vals


def _bisect_branches(f, z_lo, z_hi, w_lo, w_hi, branches, out):
    """Shared bisection of several decreasing branches that change sign in (z_lo, z_hi]."""
    stack = [(z_lo, z_hi, w_lo, w_hi, branches)]
    while stack:
        a, b, wa, wb, ks = stack.pop()
        mid = 0.5 * (a + b)
        if mid <= a or mid >= b or (b - a) <= 4.0 * np.spacing(max(abs(a), abs(b))):
            for k in ks:
                out[k] = (a, b)
            continue
        wm = f(mid)
        left = [k for k in ks if wm[k] <= 0.0]
        right = [k for k in ks if wm[k] > 0.0]
        if left:
            stack.append((a, mid, wa, wm, left))
        if right:
            stack.append((mid, b, wm, wb, right))


def _merge(roots, gap, tol, residual_of):
    """Cluster per-branch root locations into SpectralRoot records."""
    roots = sorted(roots, key=lambda r: r[0])
    merged = []
    i = 0
    while i < len(roots):
        j = i + 1
        while j < len(roots) and roots[j][0] - roots[j - 1][0] <= max(tol, 64 * np.spacing(abs(roots[j][0]))):
            j += 1
        chunk = roots[i:j]
        z0 = float(np.mean([r[0] for r in chunk]))
        sectors = tuple(sorted(r[1] for r in chunk if r[1] is not None))
        merged.append(SpectralRoot(
            z0=z0, multiplicity=len(chunk), gap_index=gap,
            residual=residual_of(z0, len(chunk)),
            sector=sectors[0] if sectors else None, sectors=sectors))
        i = j
    return merged


def _check_residual(root, tol, scale):
    if root.residual > tol * scale:
        warnings.warn(f"root at z={root.z0!r} reached float resolution with residual "
                      f"{root.residual:.3e} > {tol:.1e} x scale {scale:.3e}", RuntimeWarning)


def find_roots(points: PointArray, B: float, window=None, *, gap_index=None,
               opts: RootOptions = DEFAULT_OPTIONS) -> list[SpectralRoot]:
    """All eigenvalues inside one spectral gap (or a window within it), ascending."""
    if not (math.isfinite(B) and B != 0):
        raise DomainError(f"B must be finite and nonzero, got {B!r}")
    gap, lo, hi = resolve_window(B, window, gap_index, opts,
                                 lowest=lambda z: _lowest_eig(points, B, z))
    coord = _Coordinate(B, gap)
    zs, vals = _scan(points, B, coord, coord.to_u(lo), coord.to_u(hi), opts)

    def eig(z):
        return np.linalg.eigvalsh(_assemble(points, B, z)[0])

    brackets = {}
    for i in range(len(zs) - 1):
        ks = [k for k in range(points.n) if vals[i, k] > 0.0 >= vals[i + 1, k]]
        if ks:
            _bisect_branches(eig, zs[i], zs[i + 1], vals[i], vals[i + 1], ks, brackets)
    found = [(0.5 * (a + b), None) for a, b in brackets.values()]

    def residual_of(z0, m):
        return float(np.sort(np.abs(eig(z0)))[m - 1])

    merged = _merge(found, gap, opts.cluster_tol, residual_of)
    if sum(r.multiplicity for r in merged) > points.n:
        raise ScanResolutionError("more roots than obstacles in one gap")
    for r in merged:
        _check_residual(r, opts.residual_tol, _assemble(points, B, r.z0)[1])
    return merged


def roots_in_range(points: PointArray, B: float, z_lo: float, z_hi: float,
                   opts: RootOptions = DEFAULT_OPTIONS, finder=None) -> list[SpectralRoot]:
    """Split (z_lo, z_hi) at the Landau levels and search every gap it touches."""
    finder = finder or (lambda w, g: find_roots(points, B, w, gap_index=g, opts=opts))
    first = gap_index_of(B, z_lo) if math.isfinite(z_lo) else 0
    last = gap_below(B, z_hi)
    out = []
    for g in range(first, last + 1):
        lower, upper = gap_bounds(B, g)
        lo, hi = max(lower, z_lo), min(upper, z_hi)
        if lo < hi:
            out.extend(finder((lo, hi), g))
    return out


# --------------------------------------------------------------------------
# circulant fast path


def ring_row(spec: RingSpec, B, z):
    """First row c_l = Lambda[N, l] of the circulant matrix, l = 0..N-1."""
    n = spec.n_points
    _, xi_value = _constants(float(B), float(z))
    row = np.empty(n, dtype=complex)
    row[0] = spec.alpha - xi_value
    if n > 1:
        l = np.arange(1, n)
        angle = 2.0 * np.pi * l / n
        others = spec.radius * np.stack([np.cos(angle), np.sin(angle)], axis=1)
        row[1:] = -green_kernel(np.array([spec.radius, 0.0]), others, B, z)
    return row


def sector_values(spec: RingSpec, B, z):
    """mu_k = sum_l c_l exp(2 pi i k l / N); eigenvalue of Lambda on the k-th Fourier vector."""
    row = ring_row(spec, B, z)
    return (spec.n_points * np.fft.ifft(row)).real


def circulant_roots(spec: RingSpec, B: float, window=None, *, gap_index=None,
                    opts: RootOptions = DEFAULT_OPTIONS) -> list[SpectralRoot]:
    """Roots via one scalar equation per rotation sector, bisected together."""
    if not (math.isfinite(B) and B != 0):
        raise DomainError(f"B must be finite and nonzero, got {B!r}")
    gap, lo, hi = resolve_window(B, window, gap_index, opts,
                                 lowest=lambda z: sector_values(spec, B, z).min())
    found = [(z0, k) for k, z0 in _sector_zeros(spec, B, lo, hi).items()]
    points = ring_points(spec)

    def residual_of(z0, m):
        return float(np.sort(np.abs(sector_values(spec, B, z0)))[m - 1])

    merged = _merge(found, gap, opts.cluster_tol, residual_of)
    for r in merged:
        _check_residual(r, opts.residual_tol, _assemble(points, B, r.z0)[1])
    return merged


def _sector_zeros(spec, B, lo, hi):
    mu_lo, mu_hi = sector_values(spec, B, lo), sector_values(spec, B, hi)
    ks = [k for k in range(spec.n_points) if mu_lo[k] > 0.0 >= mu_hi[k]]
    brackets = {}
    if ks:
        _bisect_branches(lambda z: sector_values(spec, B, z), lo, hi, mu_lo, mu_hi, ks, brackets)
    return {k: 0.5 * (a + b) for k, (a, b) in sorted(brackets.items())}


def sector_roots(spec: RingSpec, B: float, window=None, *, gap_index=None,
                 opts: RootOptions = DEFAULT_OPTIONS) -> dict[int, float]:
    """Root of each sector inside the window, sector -> z0 (sectors without a root omitted)."""
    _, lo, hi = resolve_window(B, window, gap_index, opts,
                               lowest=lambda z: sector_values(spec, B, z).min())
    return _sector_zeros(spec, B, lo, hi)
