"""Eigenfunctions from Krein null vectors, boundary values, density and current fields.

An eigenvalue z0 with Lambda(z0) d = 0 has the (unnormalised) eigenfunction

    psi(x) = sum_j d_j G(x, a_j; z0),

and the exact norm ||psi||^2 = -d^H Lambda'(z0) d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, GridError, NotARootError
from .green import FieldPoint, KernelTables, green_kernel, vector_potential
from .krein import PointArray, RingSpec, _assemble, build_lambda, lambda_derivative, ring_points

NULL_TOL = 1e-8
BOUNDARY_RADII = (1e-3, 5e-4, 2.5e-4)
BOUNDARY_ANGLES = 64
FIT_TOL = 1e-3
MASK_SPACINGS = 2.0
MAX_MASKED_FRACTION = 0.05
CHUNK = 16384


def phase_fix(d):
    """Rotate so the first non-negligible component is real positive."""
    d = np.asarray(d, dtype=complex)
    mag = np.abs(d)
    lead = int(np.flatnonzero(mag > 1e-12 * mag.max())[0])
    return d * (np.conj(d[lead]) / mag[lead])


def null_vector(lm, multiplicity=1):
    """Unit null vector of Lambda(z0), or an orthonormal basis (columns) when multiplicity > 1."""
    w, v = np.linalg.eigh(lm.entries)
    order = np.argsort(np.abs(w))[:multiplicity]
    worst = float(np.abs(w[order]).max())
    if worst > NULL_TOL * lm.scale:
        raise NotARootError(
            f"smallest |eigenvalue| {worst:.3e} exceeds {NULL_TOL:.0e} x {lm.scale:.3e} "
            f"at z={lm.fp.z!r}")
    basis = np.column_stack([phase_fix(v[:, k]) for k in sorted(order)])
    return basis[:, 0] if multiplicity == 1 else basis


@dataclass(frozen=True, eq=False)
class EigenState:
    z0: float
    d: np.ndarray
    points: PointArray
    B: float
    norm_constant: float
    sector: int | None = None
    label: str = ""

    @property
    def residual(self) -> float:
        mat, _ = _assemble(self.points, self.B, self.z0)
        return float(np.linalg.norm(mat @ self.d))

    @property
    def residual_scale(self) -> float:
        return _assemble(self.points, self.B, self.z0)[1]


def exact_norm(points, B, z0, d) -> float:
    """||psi||^2 = -d^H Lambda'(z0) d for psi = sum_j d_j G(., a_j)."""
    value = float(np.real(np.conj(d) @ (-lambda_derivative(points, B, z0)) @ d))
    if not value > 0:
        raise NotARootError(f"non-positive norm {value!r} at z={z0!r}")
    return value


def make_state(points: PointArray, B: float, z0: float, d=None, *, sector=None, label="") -> EigenState:
    """Eigenstate at a root; d defaults to the null vector of Lambda(z0)."""
    lm = build_lambda(points, FieldPoint(B, z0))
    if d is None:
        d = null_vector(lm)
    d = phase_fix(np.asarray(d, dtype=complex) / np.linalg.norm(d))
    resid = float(np.linalg.norm(lm.entries @ d))
    if resid > NULL_TOL * lm.scale:
        raise NotARootError(f"||Lambda d|| = {resid:.3e} exceeds {NULL_TOL:.0e} x {lm.scale:.3e}")
    return EigenState(float(z0), d, points, float(B), exact_norm(points, B, z0, d), sector, label)


def fourier_vector(n, k):
    """(exp(2 pi i k j / n))_{j=1..n} / sqrt(n), the sector-k eigenvector of a ring circulant."""
    j = np.arange(1, n + 1)
    return np.exp(2j * np.pi * k * j / n) / math.sqrt(n)


def sector_state(spec: RingSpec, B: float, z0: float, k: int) -> EigenState:
    return make_state(ring_points(spec), B, z0, fourier_vector(spec.n_points, k),
                      sector=k, label=f"sector={k}")


# --------------------------------------------------------------------------
# pointwise evaluation


def wavefunction(state: EigenState, x, gradient=False, normalized=False, tables=None):
    """psi at points x of shape (..., 2); optionally its gradient (..., 2)."""
    x = np.asarray(x, dtype=float)
    a = state.points.positions
    scale = 1.0 / math.sqrt(state.norm_constant) if normalized else 1.0
    out = green_kernel(x[..., None, :], a, state.B, state.z0, gradient=gradient, tables=tables)
    if not gradient:
        return scale * (out @ state.d)
    value, grad = out
    return scale * (value @ state.d), scale * np.einsum("...jc,j->...c", grad, state.d)


def probability_current(psi, grad_psi, x, B):
    """j = 2 Im(conj(psi) grad psi) - 2 A |psi|^2 for H = (-i grad - A)^2."""
    return (2.0 * np.imag(np.conj(psi)[..., None] * grad_psi)
            - 2.0 * vector_potential(x, B) * (np.abs(psi) ** 2)[..., None])


def current_density(state: EigenState, x, tables=None):
    psi, grad = wavefunction(state, x, gradient=True, normalized=True, tables=tables)
    return probability_current(psi, grad, x, state.B)


# --------------------------------------------------------------------------
# boundary values


@dataclass(frozen=True)
class BoundaryValues:
    L0: complex
    L1: complex

    def condition_residual(self, alpha) -> float:
        """|L1 + 2 pi alpha L0| / (|L0| + |L1|)."""
        return abs(self.L1 + 2.0 * math.pi * alpha * self.L0) / (abs(self.L0) + abs(self.L1))


def local_length(state: EigenState) -> float:
    """Length below which psi near an obstacle is log plus constant."""
    half_spacing = 0.5 * state.points.nearest_spacing()
    return min(1.0, half_spacing, 1.0 / math.sqrt(abs(state.z0) + abs(state.B)))


def _boundary_circles(state: EigenState, centres):
    theta = 2.0 * np.pi * np.arange(BOUNDARY_ANGLES) / BOUNDARY_ANGLES
    ring = np.stack([np.cos(theta), np.sin(theta)], axis=1)
    radii = np.array(BOUNDARY_RADII) * local_length(state)
    pts = centres[:, None, None, :] + radii[None, :, None, None] * ring[None, None, :, :]
    return radii, wavefunction(state, pts).mean(axis=-1)


def _fit_log(radii, means) -> BoundaryValues:
    logs = np.log(radii)

    def pair(i, k):
        c0 = (means[i] - means[k]) / (logs[i] - logs[k])
        return c0, means[i] - c0 * logs[i]

    (c0a, c1a), (c0b, c1b) = pair(0, 1), pair(1, 2)
    # leading correction is O(r^2), radii halve
    c0 = (4.0 * c0b - c0a) / 3.0
    c1 = (4.0 * c1b - c1a) / 3.0
    design = np.stack([logs, np.ones(3)], axis=1)
    coef, *_ = np.linalg.lstsq(design.astype(complex), means, rcond=None)
    misfit = float(np.linalg.norm(design @ coef - means))
    if misfit > FIT_TOL * abs(c1):
        raise FitError(f"log fit misfit {misfit:.3e} exceeds {FIT_TOL} x |L1| = {abs(c1):.3e}")
    return BoundaryValues(complex(c0), complex(c1))


def boundary_values(state: EigenState, j: int) -> BoundaryValues:
    """Fit psi ~ L0 ln r + L1 from circle averages around obstacle j."""
    radii, means = _boundary_circles(state, state.points.positions[j:j + 1])
    return _fit_log(radii, means[0])


def all_boundary_values(state: EigenState) -> list[BoundaryValues]:
    """boundary_values at every obstacle, from one batched kernel evaluation."""
    radii, means = _boundary_circles(state, state.points.positions)
    return [_fit_log(radii, m) for m in means]


# --------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class GridSpec:
    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    def axes(self):
        return self.x0 + self.h * np.arange(self.nx), self.y0 + self.h * np.arange(self.ny)

    def nodes(self):
        xs, ys = self.axes()
        X, Y = np.meshgrid(xs, ys)
        return np.stack([X, Y], axis=-1)

    def refined(self) -> "GridSpec":
        return GridSpec(self.x0, self.y0, 0.5 * self.h, 2 * self.nx - 1, 2 * self.ny - 1)

    @property
    def x_max(self):
        return self.x0 + self.h * (self.nx - 1)

    @property
    def y_max(self):
        return self.y0 + self.h * (self.ny - 1)


def default_grid(points: PointArray, nodes=201) -> GridSpec:
    """Square of half-width twice the outermost obstacle radius, centred at the origin."""
    radius = float(np.hypot(*points.positions.T).max())
    if radius == 0.0:
        radius = 1.0
    half = 2.0 * radius
    h = 2.0 * half / (nodes - 1)
    return GridSpec(-half, -half, h, nodes, nodes)


@dataclass(frozen=True, eq=False)
class CurrentField:
    grid: GridSpec
    density: np.ndarray
    current: np.ndarray
    mask: np.ndarray
    norm_constant: float
    coverage: float
    core_probability: float
    nearest: np.ndarray
    cutoff: tuple
    label: str = ""

    def probability(self) -> float:
        """Integral of the density: trapezoid sum outside the obstacle cores plus the core part."""
        g = self.grid
        tw = np.ones(self.mask.shape)
        tw[0, :] *= 0.5
        tw[-1, :] *= 0.5
        tw[:, 0] *= 0.5
        tw[:, -1] *= 0.5
        outer = 1.0 - _cutoff(self.nearest, *self.cutoff)
        return g.h * g.h * float(np.sum(tw * outer * self.density)) + self.core_probability


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        f = np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)
        g = np.where(t < 1, np.exp(-1.0 / np.where(t < 1, 1.0 - t, 1.0)), 0.0)
    return f / (f + g)


def _cutoff(r, r_in, r_out):
    """1 for r <= r_in, 0 for r >= r_out, smooth in between."""
    return _smoothstep((r_out - r) / (r_out - r_in))


def _evaluate(state, x, tables):
    flat = x.reshape(-1, 2)
    psi = np.empty(len(flat), dtype=complex)
    grad = np.empty((len(flat), 2), dtype=complex)
    for start in range(0, len(flat), CHUNK):
        sl = slice(start, start + CHUNK)
        psi[sl], grad[sl] = wavefunction(state, flat[sl], gradient=True, tables=tables)
    return psi.reshape(x.shape[:-1]), grad.reshape(x.shape)


def _density_only(state, x, tables):
    flat = x.reshape(-1, 2)
    out = np.empty(len(flat))
    for start in range(0, len(flat), CHUNK):
        sl = slice(start, start + CHUNK)
        out[sl] = np.abs(wavefunction(state, flat[sl], tables=tables)) ** 2
    return out.reshape(x.shape[:-1])


def _polar_rule(r_in, r_out, n_angles=64, n_outer=32, n_inner=64, depth=23.0):
    """Nodes and weights for integrating f(r, theta) r dr dtheta over the disc r < r_out.

    r = r_out exp(-u); the annulus r_in < r < r_out and the inner disc get separate
    Gauss-Legendre rules in u, the angle a trapezoid rule.
    """
    u_in = math.log(r_out / r_in)
    radii, weights = [], []
    for (u0, u1, n) in ((0.0, u_in, n_outer), (u_in, u_in + depth, n_inner)):
        t, w = np.polynomial.legendre.leggauss(n)
        u = 0.5 * (u1 - u0) * (t + 1.0) + u0
        r = r_out * np.exp(-u)
        radii.append(r)
        weights.append(0.5 * (u1 - u0) * w * r * r)
    radii, weights = np.concatenate(radii), np.concatenate(weights)
    theta = 2.0 * np.pi * np.arange(n_angles) / n_angles
    offsets = radii[:, None, None] * np.stack([np.cos(theta), np.sin(theta)], axis=-1)[None]
    return radii, weights * (2.0 * np.pi / n_angles), offsets


def current_grid(state: EigenState, grid: GridSpec | None = None) -> CurrentField:
    """Density and current on a grid, normalised so the grid integral of density is 1.

    ``coverage`` is the grid integral of |psi|^2 over the exact norm, i.e. the
    fraction of the state the grid actually holds.

    Nodes within two spacings of an obstacle are masked. The normalisation
    integral splits |psi|^2 with a smooth cutoff around each obstacle: the
    outer part is summed on the grid (trapezoid weights), the cutoff part is
    integrated on a polar rule that resolves the logarithmic core.
    """
    grid = grid or default_grid(state.points)
    pos = state.points.positions
    h = grid.h
    spacing = state.points.nearest_spacing()
    if h > spacing / 4.0:
        raise GridError(f"spacing {h} gives fewer than 4 samples per obstacle chord {spacing:.4g}")
    nodes = grid.nodes()
    diff = nodes[:, :, None, :] - pos[None, None]
    dist = np.hypot(diff[..., 0], diff[..., 1])
    nearest = dist.min(axis=-1)
    mask = nearest < MASK_SPACINGS * h
    if mask.mean() > MAX_MASKED_FRACTION:
        raise GridError(f"masking removes {100 * mask.mean():.1f}% of nodes")

    half_width = min(grid.x_max - grid.x0, grid.y_max - grid.y0) / 2.0
    r_in = MASK_SPACINGS * h
    r_out = 0.4 * min(spacing, half_width)
    if r_out < 2.0 * r_in:
        raise GridError(f"grid spacing {h} too coarse for cutoff radius {r_out:.4g}")
    radii, pweights, offsets = _polar_rule(r_in, r_out)

    live = ~mask
    r_lo = min(float(radii.min()), float(dist[live].min()))
    r_hi = float(dist.max())
    zeta = 0.5 * abs(state.B) * np.array([r_lo, r_hi]) ** 2
    # rounding in centre + offset perturbs the smallest radii, so pad the range
    tables = KernelTables(state.B, state.z0, 0.5 * zeta[0], 2.0 * zeta[1])

    psi = np.zeros(mask.shape, dtype=complex)
    grad = np.zeros(mask.shape + (2,), dtype=complex)
    psi[live], grad[live] = _evaluate(state, nodes[live], tables)
    rho = np.abs(psi) ** 2

    tw = np.ones(mask.shape)
    tw[0, :] *= 0.5
    tw[-1, :] *= 0.5
    tw[:, 0] *= 0.5
    tw[:, -1] *= 0.5
    outer = 1.0 - _cutoff(nearest, r_in, r_out)
    chi = _cutoff(radii, r_in, r_out)
    core = 0.0
    for centre in pos:
        dens = _density_only(state, centre + offsets, tables)
        core += float(np.sum((pweights * chi)[:, None] * dens))
    total = h * h * float(np.sum(tw * outer * rho)) + core

    cur = probability_current(psi, grad, nodes, state.B)
    cur[mask] = 0.0
    return CurrentField(
        grid=grid,
        density=rho / total,
        current=cur / total,
        mask=mask,
        norm_constant=total,
        coverage=total / state.norm_constant,
        core_probability=core / total,
        nearest=nearest,
        cutoff=(r_in, r_out),
        label=state.label,
    )


def _bilinear(field: CurrentField, values, x):
    g = field.grid
    fx = (x[:, 0] - g.x0) / g.h
    fy = (x[:, 1] - g.y0) / g.h
    i = np.clip(np.floor(fx).astype(int), 0, g.nx - 2)
    k = np.clip(np.floor(fy).astype(int), 0, g.ny - 2)
    tx, ty = fx - i, fy - k
    tx, ty = tx[:, None], ty[:, None]
    return ((1 - tx) * (1 - ty) * values[k, i] + tx * (1 - ty) * values[k, i + 1]
            + (1 - tx) * ty * values[k + 1, i] + tx * ty * values[k + 1, i + 1])


def circulation(field: CurrentField, loop_radius: float, n=512, centre=(0.0, 0.0)) -> float:
    """Counterclockwise line integral of j around a circle (masked nodes count as 0)."""
    g = field.grid
    cx, cy = centre
    if (cx - loop_radius < g.x0 - 1e-12 or cx + loop_radius > g.x_max + 1e-12
            or cy - loop_radius < g.y0 - 1e-12 or cy + loop_radius > g.y_max + 1e-12):
        raise GridError(f"loop of radius {loop_radius} leaves the grid")
    theta = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack([cx + loop_radius * np.cos(theta), cy + loop_radius * np.sin(theta)], axis=1)
    j = _bilinear(field, field.current, pts)
    tangent = np.stack([-np.sin(theta), np.cos(theta)], axis=1)
    return float(np.sum(j * tangent) * loop_radius * 2.0 * np.pi / n)


def divergence(field: CurrentField):
    """Central-difference div j at nodes whose four neighbours are unmasked; NaN elsewhere."""
    jx, jy = field.current[..., 0], field.current[..., 1]
    h = field.grid.h
    out = np.full(jx.shape, np.nan)
    ok = ~field.mask
    ok[1:-1, 1:-1] &= ~(field.mask[1:-1, :-2] | field.mask[1:-1, 2:]
                        | field.mask[:-2, 1:-1] | field.mask[2:, 1:-1])
    ok[0, :] = ok[-1, :] = False
    ok[:, 0] = ok[:, -1] = False
    div = np.zeros(jx.shape)
    div[1:-1, 1:-1] = ((jx[1:-1, 2:] - jx[1:-1, :-2]) + (jy[2:, 1:-1] - jy[:-2, 1:-1])) / (2.0 * h)
    out[ok] = div[ok]
    return out


def divergence_refinement(state: EigenState, grid: GridSpec | None = None, exclusion=4.0):
    """max |div j| on the coarse nodes, at spacing h and h/2, away from the obstacles.

    Only nodes farther than ``exclusion`` coarse spacings from every obstacle
    and resolved on both grids enter. Returns (coarse, fine, coarse_field).
    """
    coarse = current_grid(state, grid)
    fine = current_grid(state, coarse.grid.refined())
    d1 = divergence(coarse)
    d2 = divergence(fine)[::2, ::2]
    sel = (coarse.nearest >= exclusion * coarse.grid.h) & np.isfinite(d1) & np.isfinite(d2)
    if not sel.any():
        raise GridError("no node survives the exclusion zone on both grids")
    return float(np.abs(d1[sel]).max()), float(np.abs(d2[sel]).max()), coarse
