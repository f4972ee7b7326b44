"""Free Landau Green's function, circular gauge.

Units: hbar = c = e = 2m* = 1, H = (-i grad - A)^2, A(x) = (B/2)(-x2, x1).
Landau levels sit at |B|(2n+1).

The kernel solves (H - z) G(., x') = delta(. - x') in its *first* argument:

    G(x, x'; z) = Phi(x, x') Gamma(a) U(a, 1; |B| |x - x'|^2 / 2) / (4 pi),
    a = (|B| - z) / (2|B|),
    Phi(x, x') = exp[i (B/2)(x1' x2 - x1 x2') - (|B|/4)|x - x'|^2].

The phase is the straight-line integral of A from x' to x, which makes the
kernel covariant under rotations about the origin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from . import specfun
from .errors import CoincidenceError, DomainError, PoleError

COINCIDENCE_TOL = 1e-12
LANDAU_TOL = 1e-9

FOUR_PI = 4.0 * math.pi


class PlanePoint(NamedTuple):
    x1: float
    x2: float


@dataclass(frozen=True)
class FieldPoint:
    B: float
    z: float

    def __post_init__(self):
        if not (math.isfinite(self.B) and self.B != 0.0):
            raise DomainError(f"B must be finite and nonzero, got {self.B!r}")
        if not math.isfinite(self.z):
            raise DomainError(f"z must be finite, got {self.z!r}")

    @property
    def a(self) -> float:
        """First parameter of U, (|B| - z) / (2|B|)."""
        return landau_parameter(self.B, self.z)

    def check_off_landau(self):
        n = nearest_landau_index(self.B, self.z)
        if abs(self.z - landau_level(self.B, n)) < LANDAU_TOL * max(1.0, abs(self.B)):
            raise PoleError(f"z = {self.z!r} sits on Landau level n = {n} for B = {self.B!r}")


@dataclass(frozen=True)
class GreenValue:
    value: complex
    gradient: np.ndarray | None = None


def landau_parameter(B, z):
    return (abs(B) - z) / (2.0 * abs(B))


def landau_level(B, n):
    return abs(B) * (2 * n + 1)


def nearest_landau_index(B, z):
    return max(0, int(round((z / abs(B) - 1.0) / 2.0)))


def vector_potential(x, B):
    """Circular gauge A(x) = (B/2)(-x2, x1); x has shape (..., 2)."""
    x = np.asarray(x, dtype=float)
    return 0.5 * B * np.stack([-x[..., 1], x[..., 0]], axis=-1)


def _gauge_phase(x, xp, B):
    return 0.5 * B * (xp[..., 0] * x[..., 1] - x[..., 0] * xp[..., 1])


def phase_factor(x, xp, B) -> complex:
    """exp[i (B/2)(x1' x2 - x1 x2') - (|B|/4)|x - x'|^2]."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    r2 = float(np.sum((x - xp) ** 2))
    return complex(np.exp(1j * _gauge_phase(x, xp, B) - 0.25 * abs(B) * r2))


@lru_cache(maxsize=8192)
def _constants(B: float, z: float):
    # keyed on the exact float pair, so repeated assemblies at one z are cheap
    fp = FieldPoint(B, z)
    fp.check_off_landau()
    a = fp.a
    psi = specfun.digamma(a).value
    xi_value = -(psi + 2.0 * specfun.EULER_GAMMA + math.log(abs(B) / 2.0)) / FOUR_PI
    return a, xi_value


def xi(fp: FieldPoint) -> float:
    """Regularised diagonal of G: lim [G(x, x') + ln|x - x'| / (2 pi)]."""
    return _constants(float(fp.B), float(fp.z))[1]


class KernelTables:
    """Tables of Gamma(a)U(a,1,.) and Gamma(a+1)U(a+1,2,.) over a zeta range, for dense grids."""

    def __init__(self, B, z, zeta_min, zeta_max):
        a, _ = _constants(float(B), float(z))
        self.B, self.z = float(B), float(z)
        self.value = specfun.PiecewiseUInterpolant(a, 1, zeta_min, zeta_max)
        self.slope = specfun.PiecewiseUInterpolant(a + 1.0, 2, zeta_min, zeta_max)


def _scaled(a, b, zeta, table):
    if table is not None:
        return table(zeta)
    # many repeated distances on symmetric configurations
    uniq, inverse = np.unique(zeta, return_inverse=True)
    return specfun.gamma_times_u(a, b, uniq)[0][inverse].reshape(zeta.shape)


def green_kernel(x, xp, B, z, gradient=False, tables: KernelTables | None = None):
    """Vectorised G(x, x'; z) over broadcast point arrays of shape (..., 2).

    Returns the complex values, and with ``gradient=True`` also the gradient
    with respect to the first argument, shape (..., 2).
    """
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    a, _ = _constants(float(B), float(z))
    d = x - xp
    r2 = np.sum(d * d, axis=-1)
    if r2.size and r2.min() < COINCIDENCE_TOL ** 2:
        raise CoincidenceError("green evaluated at coincident points")
    absb = abs(B)
    zeta = 0.5 * absb * r2
    theta = _gauge_phase(x, xp, B)
    phi = np.exp(1j * theta - 0.25 * absb * r2)
    f = _scaled(a, 1, zeta, tables.value if tables else None)
    value = phi * f / FOUR_PI
    if not gradient:
        return value
    # d/dzeta [Gamma(a) U(a,1,zeta)] = -Gamma(a+1) U(a+1,2,zeta)
    fprime = -_scaled(a + 1.0, 2, zeta, tables.slope if tables else None)
    dtheta = 0.5 * B * np.stack([-xp[..., 1], xp[..., 0]], axis=-1)
    dtheta = np.broadcast_to(dtheta, d.shape)
    grad = (value[..., None] * (1j * dtheta - 0.5 * absb * d)
            + (phi * fprime * absb / FOUR_PI)[..., None] * d)
    return value, grad


def green(x, xp, fp: FieldPoint, gradient=False) -> GreenValue:
    """G(x, x'; z) at a single pair of points."""
    x = np.asarray(x, dtype=float)
    xp = np.asarray(xp, dtype=float)
    if np.hypot(*(x - xp)) < COINCIDENCE_TOL:
        raise CoincidenceError(f"points {tuple(x)} and {tuple(xp)} coincide")
    if gradient:
        v, g = green_kernel(x, xp, fp.B, fp.z, gradient=True)
        return GreenValue(complex(v), np.asarray(g, dtype=complex))
    return GreenValue(complex(green_kernel(x, xp, fp.B, fp.z)))
