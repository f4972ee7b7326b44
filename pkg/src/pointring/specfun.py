"""Real-argument gamma, digamma and the Tricomi function U(a, b, zeta), b in {1, 2}.

U is stitched from three regimes, all evaluated on the scaled quantity
``Gamma(a) * U(a, b, zeta)`` for ``a >= 1`` so that very large ``a`` (deep
bound states) never overflows the gamma prefactor:

* logarithmic power series for ``zeta < SERIES_MAX_ZETA``,
* trapezoidal quadrature of the Laplace integral
  ``int_0^inf exp(-zeta t) t^(a-1) (1+t)^(b-a-1) dt`` after the substitution
  ``t = exp(s)`` (log-concave integrand, exponentially convergent rule),
* the large-``zeta`` asymptotic series ``zeta^-a sum (a)_n (a-b+1)_n / n! (-1/zeta)^n``
  for ``zeta > ASYMPTOTIC_MIN_ZETA``.

A regime that cannot meet its own error target hands the point over to the
quadrature. Arguments ``a < 1`` are reached by downward recurrence in ``a``,
which is stable because U is the minimal solution as ``a`` grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DomainError, PoleError

EULER_GAMMA = 0.57721566490153286060651209

POLE_TOL = 1e-10
SERIES_MAX_ZETA = 1.0
ASYMPTOTIC_MIN_ZETA = 30.0
MAX_RECURRENCE_DEPTH = 60
MAX_SERIES_TERMS = 200

SERIES, QUADRATURE, ASYMPTOTIC = 0, 1, 2
REGIME_NAMES = {SERIES: "series", QUADRATURE: "quadrature", ASYMPTOTIC: "asymptotic"}

_EPS = float(np.finfo(float).eps)
# a regime is accepted when its own estimate is below this (relative)
_TARGET = 1e-13
# anything worse than this is an error, not a result
_REQUIRED = 1e-9

# quadrature controls
_TAIL_DROP = 46.0  # exp(-46) ~ 1e-20 relative to the peak
_H_MAX = 0.2
_H_SIGMA = 0.4
_CHUNK_CELLS = 2_000_000


@dataclass(frozen=True)
class SpecialValue:
    value: float
    absolute_error_estimate: float

    def __float__(self):
        return self.value


def _pole_distance(a):
    return abs(a - round(a))


def _check_argument(a, name):
    if not math.isfinite(a):
        raise DomainError(f"{name}: argument {a!r} is not finite")
    if a <= 0.5 and _pole_distance(a) < POLE_TOL and round(a) <= 0:
        raise PoleError(f"{name}: argument {a!r} is at a nonpositive-integer pole")


def gamma(a) -> SpecialValue:
    """Gamma function; negative arguments go through the reflection formula."""
    a = float(a)
    _check_argument(a, "gamma")
    try:
        if a >= 0.5:
            v = math.gamma(a)
        else:
            frac = a - math.floor(a)
            v = math.pi / (math.sin(math.pi * frac) * math.gamma(1.0 - a))
            if math.floor(a) % 2:
                v = -v
    except OverflowError:
        raise DomainError(f"gamma({a!r}) overflows double precision") from None
    cond = 1.0 + abs(a)
    if a < 0:
        cond += 1.0 / _pole_distance(a)
    return SpecialValue(v, 8.0 * _EPS * abs(v) * cond)


def _digamma_parts(x):
    """Digamma for x > 0 plus the sum of magnitudes that entered it."""
    acc = 0.0
    mag = 0.0
    while x < 10.0:
        acc -= 1.0 / x
        mag += 1.0 / x
        x += 1.0
    r = 1.0 / (x * x)
    tail = r * (1 / 12 - r * (1 / 120 - r * (1 / 252 - r * (1 / 240 - r * (
        1 / 132 - r * (691 / 32760 - r / 12))))))
    lx = math.log(x)
    return acc + lx - 0.5 / x - tail, mag + lx + 0.5 / x


def digamma_float(a: float) -> float:
    """Bare-float digamma used on hot paths; argument checks are the caller's."""
    if a > 0:
        return _digamma_parts(a)[0]
    frac = a - math.floor(a)
    return _digamma_parts(1.0 - a)[0] - math.pi / math.tan(math.pi * frac)


def digamma(a) -> SpecialValue:
    """Digamma psi(a); reflection psi(a) = psi(1-a) - pi cot(pi a) for a <= 0."""
    a = float(a)
    _check_argument(a, "digamma")
    if a > 0:
        v, mag = _digamma_parts(a)
        return SpecialValue(v, 4.0 * _EPS * (mag + 1.0))
    frac = a - math.floor(a)
    base, mag = _digamma_parts(1.0 - a)
    s = math.sin(math.pi * frac)
    cot = math.cos(math.pi * frac) / s
    v = base - math.pi * cot
    err = 4.0 * _EPS * (mag + 1.0 + math.pi * abs(cot)) + math.pi ** 2 * _EPS * abs(a) / (s * s)
    return SpecialValue(v, err)


# ---------------------------------------------------------------------------
# scaled U for a >= 1: F(a, b, zeta) = Gamma(a) U(a, b, zeta)
# ---------------------------------------------------------------------------

def _series_scaled(a, b, zeta):
    """Logarithmic series; returns (F, err). err = inf marks rejection."""
    n = zeta.size
    lz = np.log(zeta)
    psi_a = digamma_float(a)
    psi_k1 = -EULER_GAMMA  # psi(k+1)
    psi_k2 = 1.0 - EULER_GAMMA  # psi(k+2)
    coef = np.ones(n)  # (a)_k zeta^k / (k! (k+1)!) for b=2, / (k!)^2 for b=1
    total = np.zeros(n)
    absum = np.zeros(n)
    active = np.ones(n, dtype=bool)
    last = np.zeros(n)
    for k in range(MAX_SERIES_TERMS):
        p = psi_a - psi_k1 - (psi_k1 if b == 1 else psi_k2)
        term = coef * (lz + p)
        total = np.where(active, total + term, total)
        absum = np.where(active, absum + coef * (np.abs(lz) + abs(p)), absum)
        last = np.where(active, np.abs(term), last)
        active &= ~(np.abs(coef) * (np.abs(lz) + abs(p) + 1.0) <= 1e-17 * np.abs(total))
        if not active.any():
            break
        # advance k -> k+1
        if b == 1:
            coef = coef * (a + k) * zeta / ((k + 1.0) * (k + 1.0))
        else:
            coef = coef * (a + k) * zeta / ((k + 1.0) * (k + 2.0))
        psi_a += 1.0 / (a + k)
        psi_k1 += 1.0 / (k + 1.0)
        psi_k2 += 1.0 / (k + 2.0)
    if b == 1:
        value = -total
        err = 8.0 * _EPS * absum + last
    else:
        value = 1.0 / zeta + (a - 1.0) * total
        err = 8.0 * _EPS * ((a - 1.0) * absum + 1.0 / zeta) + (a - 1.0) * last
    err = np.where(active, np.inf, err)
    return value, err


def _asymptotic_scaled(a, b, zeta):
    """Large-zeta expansion; returns (F, err) with err = inf when it diverges first."""
    c = a - b + 1.0
    x = -1.0 / zeta
    term = np.ones_like(zeta)
    total = np.ones_like(zeta)
    err = np.full_like(zeta, np.inf)
    active = np.ones(zeta.shape, dtype=bool)
    for n in range(MAX_SERIES_TERMS):
        nxt = term * (a + n) * (c + n) / (n + 1.0) * x
        growing = np.abs(nxt) > np.abs(term)
        converged = np.abs(nxt) <= 1e-17 * np.abs(total)
        done_now = active & (growing | converged)
        err = np.where(done_now, np.abs(nxt) + 4.0 * _EPS * (n + 1) * np.abs(total), err)
        active &= ~done_now
        total = np.where(active, total + nxt, total)
        term = nxt
        if not active.any():
            break
    log_pref = math.lgamma(a) - a * np.log(zeta)
    with np.errstate(over="ignore", invalid="ignore"):
        pref = np.exp(log_pref)
        return pref * total, pref * err


def _softplus_neg(s):
    return np.logaddexp(0.0, -s)


def _phi(s, a, b, zeta):
    # log of the Laplace integrand in s = log t
    return (b - 1.0) * s - (a - b + 1.0) * _softplus_neg(s) - zeta * np.exp(s)


def _quadrature_scaled(a, b, zeta):
    """Trapezoid rule on the log-concave integrand; returns (F, err)."""
    out = np.empty_like(zeta)
    err = np.empty_like(zeta)
    # rough upper bound on nodes per point to size chunks
    step = max(1, _CHUNK_CELLS // 800)
    for start in range(0, zeta.size, step):
        sl = slice(start, start + step)
        out[sl], err[sl] = _quadrature_chunk(a, b, zeta[sl])
    return out, err


def _quadrature_chunk(a, b, zeta):
    c = a - b + 1.0
    p = zeta + 1.0 - b
    disc = np.sqrt(p * p + 4.0 * zeta * a)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(p >= 0, 2.0 * a / (p + disc), (disc - p) / (2.0 * zeta))
    s0 = np.log(w)
    curv = c * w / (1.0 + w) ** 2 + zeta * w
    sigma = 1.0 / np.sqrt(curv)
    with np.errstate(over="ignore", invalid="ignore"):
        phi0 = _phi(s0, a, b, zeta)
        mult = 2.0 ** (np.arange(0, 160) / 2.0)
        bounds = []
        for direction in (-1.0, 1.0):
            probe = s0[:, None] + direction * sigma[:, None] * mult[None, :]
            drop = phi0[:, None] - _phi(probe, a, b, zeta[:, None])
            drop = np.where(np.isnan(drop), np.inf, drop)
            hit = drop >= _TAIL_DROP
            if not hit.any(axis=1).all():
                raise ConvergenceError(
                    "quadrature tail search failed",
                    {"regime": "quadrature", "a": a, "b": b},
                )
            idx = np.argmax(hit, axis=1)
            bounds.append(probe[np.arange(zeta.size), idx])
    lo, hi = bounds
    h_target = np.minimum(_H_MAX, _H_SIGMA * sigma)
    m = int(np.max(np.ceil((hi - lo) / h_target)))
    m += m % 2
    for _ in range(6):
        h = (hi - lo) / m
        grid = lo[:, None] + h[:, None] * np.arange(m + 1)[None, :]
        with np.errstate(over="ignore"):
            vals = np.exp(_phi(grid, a, b, zeta[:, None]) - phi0[:, None])
        vals[:, 0] *= 0.5
        vals[:, -1] *= 0.5
        fine = h * vals.sum(axis=1)
        # m is even, so the coarse rule reuses the halved endpoints
        coarse = 2.0 * h * vals[:, ::2].sum(axis=1)
        rel = np.abs(fine - coarse) / np.abs(fine)
        if np.all(rel < 1e-5):
            break
        m *= 2
    scale = np.exp(phi0)
    value = scale * fine
    err = np.abs(value) * (rel * rel + 4.0 * _EPS * math.sqrt(m) + math.exp(-_TAIL_DROP))
    err = np.where(rel < 1e-5, err, np.inf)
    return value, err


def _scaled_positive(a, b, zeta, force=None):
    """Gamma(a) U(a, b, zeta) for a >= 1. Returns (value, err, regime)."""
    value = np.empty_like(zeta)
    err = np.full_like(zeta, np.inf)
    regime = np.full(zeta.shape, QUADRATURE, dtype=np.int8)

    if force is None:
        use_series = zeta < SERIES_MAX_ZETA
        # cancellation in the series grows like exp(4 sqrt(a zeta))
        use_series &= a * zeta < 2.5
        use_asym = zeta > ASYMPTOTIC_MIN_ZETA
    else:
        use_series = np.full(zeta.shape, force == SERIES)
        use_asym = np.full(zeta.shape, force == ASYMPTOTIC)

    if use_series.any():
        v, e = _series_scaled(a, b, zeta[use_series])
        value[use_series], err[use_series] = v, e
        regime[use_series] = SERIES
    if use_asym.any():
        v, e = _asymptotic_scaled(a, b, zeta[use_asym])
        value[use_asym], err[use_asym] = v, e
        regime[use_asym] = ASYMPTOTIC

    with np.errstate(invalid="ignore"):
        rejected = ~(err <= _TARGET * np.abs(value)) | ~np.isfinite(value)
    if force is not None and force != QUADRATURE:
        rejected[:] = False
    if rejected.any():
        v, e = _quadrature_scaled(a, b, zeta[rejected])
        value[rejected], err[rejected] = v, e
        regime[rejected] = QUADRATURE

    bad = ~(err <= _REQUIRED * np.abs(value) + 1e-300)
    if force is None and bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ConvergenceError(
            f"U({a}, {b}, {zeta[i]}) missed the 1e-9 target in every regime",
            {"a": a, "b": b, "zeta": float(zeta[i]),
             "regime": REGIME_NAMES[int(regime[i])], "error_estimate": float(err[i])},
        )
    return value, err, regime


def _validate(a, b, zeta):
    if b not in (1, 2):
        raise DomainError(f"b must be 1 or 2, got {b!r}")
    if not math.isfinite(a):
        raise DomainError(f"a must be finite, got {a!r}")
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if not np.all(np.isfinite(zeta)) or np.any(zeta <= 0):
        raise DomainError("zeta must be finite and > 0")
    return zeta


def _from_scaled(a, scaled, err):
    if a < 150.0:
        g = math.gamma(a)
        return scaled / g, err / g
    lg = math.lgamma(a)
    with np.errstate(divide="ignore"):
        return (np.where(scaled > 0, np.exp(np.log(np.abs(scaled)) - lg), 0.0) * np.sign(scaled),
                np.where(err > 0, np.exp(np.log(err) - lg), 0.0))


def tricomi_u(a, b, zeta, _force=None):
    """Vectorised U(a, b, zeta) over an array of zeta; returns (values, errors)."""
    a = float(a)
    zeta = _validate(a, b, zeta)
    if a >= 1.0:
        scaled, err, _ = _scaled_positive(a, b, zeta, _force)
        return _from_scaled(a, scaled, err)

    depth = math.ceil(1.0 - a)
    if depth > MAX_RECURRENCE_DEPTH:
        raise DomainError(f"a = {a} needs recurrence depth {depth} > {MAX_RECURRENCE_DEPTH}")
    top = a + depth
    s1, e1, _ = _scaled_positive(top, b, zeta, _force)
    s2, e2, _ = _scaled_positive(top + 1.0, b, zeta, _force)
    u_hi, err_hi = _from_scaled(top + 1.0, s2, e2)  # U(c+1)
    u_c, err_c = _from_scaled(top, s1, e1)  # U(c)
    c = top
    for _ in range(depth):
        p = b - 2.0 * c - zeta
        q = c * (c - b + 1.0)
        u_lo = -p * u_c - q * u_hi
        err_lo = (np.abs(p) * err_c + abs(q) * err_hi
                  + 2.0 * _EPS * (np.abs(p * u_c) + np.abs(q * u_hi)))
        u_hi, err_hi = u_c, err_c
        u_c, err_c = u_lo, err_lo
        c -= 1.0
    return u_c, err_c


def gamma_times_u(a, b, zeta):
    """Vectorised Gamma(a) * U(a, b, zeta); safe for large a where Gamma overflows."""
    a = float(a)
    zeta = _validate(a, b, zeta)
    if a >= 1.0:
        scaled, err, _ = _scaled_positive(a, b, zeta)
        return scaled, err
    g = gamma(a)
    u, err = tricomi_u(a, b, zeta)
    return g.value * u, abs(g.value) * err + g.absolute_error_estimate * np.abs(u)


def _scalar(values, errors):
    return SpecialValue(float(values[0]), float(errors[0]))


def kummer_u(a, b, zeta) -> SpecialValue:
    """Tricomi U(a, b, zeta) for b in {1, 2} and zeta > 0."""
    if np.ndim(zeta) != 0:
        raise DomainError("kummer_u takes a scalar zeta; use tricomi_u for arrays")
    return _scalar(*tricomi_u(a, b, zeta))


def kummer_u_dz(a, zeta) -> SpecialValue:
    """d/dzeta U(a, 1, zeta) = -a U(a+1, 2, zeta)."""
    a = float(a)
    if a == 0.0:
        return SpecialValue(0.0, 0.0)
    u = kummer_u(a + 1.0, 2, zeta)
    return SpecialValue(-a * u.value, abs(a) * u.absolute_error_estimate)


class ScaledUInterpolant:
    """Chebyshev interpolant of ``zeta -> Gamma(a) U(a, b, zeta)`` in ``log(zeta)``.

    The map is analytic in the strip ``|Im log zeta| < pi``, so the degree
    needed is modest; it is doubled until the trailing coefficients drop below
    ``tol`` times the largest sampled value. Used for dense grid evaluation
    where the direct regimes would dominate the run time.
    """

    def __init__(self, a, b, zeta_min, zeta_max, tol=1e-13, max_degree=2048):
        if not 0 < zeta_min < zeta_max:
            raise DomainError("need 0 < zeta_min < zeta_max")
        self.a, self.b = float(a), b
        self.domain = (math.log(zeta_min), math.log(zeta_max))
        degree = 64
        while True:
            series = np.polynomial.Chebyshev.interpolate(
                lambda s: gamma_times_u(self.a, b, np.exp(s))[0], degree, domain=self.domain)
            coef = np.abs(series.coef)
            scale = coef.max()
            if scale == 0.0 or coef[-8:].max() <= tol * scale:
                break
            if degree >= max_degree:
                raise ConvergenceError(
                    "Chebyshev interpolant did not converge",
                    {"a": a, "b": b, "degree": degree,
                     "tail": float(coef[-8:].max() / scale)},
                )
            degree *= 2
        self.degree = degree
        self._series = series

    def __call__(self, zeta):
        s = np.log(np.asarray(zeta, dtype=float))
        lo, hi = self.domain
        if s.size and (s.min() < lo - 1e-12 or s.max() > hi + 1e-12):
            raise DomainError("zeta outside the interpolation range")
        return self._series(s)


class PiecewiseUInterpolant:
    """Piecewise Chebyshev table of ``zeta -> Gamma(a) U(a, b, zeta)`` in ``s = log(zeta)``.

    With ``log_values=True`` (requires a > 0 so the function is positive) the
    log of the function is fitted, which keeps the error relative point by
    point even when the values span hundreds of decades; beyond the point
    where the function drops below ``UNDERFLOW`` it returns 0. Otherwise the
    raw values are fitted with a tolerance relative to each piece's maximum.
    Pieces are halved until a degree-``degree`` fit converges.
    """

    UNDERFLOW = 1e-290

    def __init__(self, a, b, zeta_min, zeta_max, log_values=None, tol=1e-14,
                 degree=32, max_pieces=4096):
        if not 0 < zeta_min < zeta_max:
            raise DomainError("need 0 < zeta_min < zeta_max")
        self.a, self.b = float(a), b
        if log_values is None:
            log_values = self.a > 0
        if log_values and not self.a > 0:
            raise DomainError("log_values needs a > 0")
        self.log_values = log_values
        lo, hi = math.log(zeta_min), math.log(zeta_max)
        self.domain = (lo, hi)
        self.cut = hi
        if log_values:
            probe = np.linspace(lo, hi, 513)
            vals = gamma_times_u(self.a, b, np.exp(probe))[0]
            alive = np.flatnonzero(vals > self.UNDERFLOW)
            if len(alive) == 0:
                raise DomainError("function underflows on the whole range")
            self.cut = float(probe[alive[-1]])
            if self.cut <= lo:
                self.cut = lo + 1e-9 * max(1.0, abs(lo))

        noise = [0.0]

        def target(s):
            v, err = gamma_times_u(self.a, b, np.exp(s))[:2]
            if log_values:
                noise[0] = float(np.max(err / v))
                return np.log(v)
            noise[0] = float(np.max(err))
            return v

        pending = [(lo, self.cut)]
        pieces = []
        while pending:
            left, right = pending.pop()
            fit = np.polynomial.Chebyshev.interpolate(target, degree, domain=(left, right))
            coef = np.abs(fit.coef)
            ref = max(1.0, coef.max()) if log_values else coef.max()
            # a tail at the level of the evaluation error cannot shrink by subdivision
            if ref == 0.0 or coef[-4:].max() <= max(tol * ref, noise[0]):
                pieces.append((left, right, fit))
                continue
            if len(pieces) + len(pending) >= max_pieces:
                raise ConvergenceError("piecewise interpolant did not converge",
                                       {"a": a, "b": b, "pieces": len(pieces)})
            mid = 0.5 * (left + right)
            pending.extend([(mid, right), (left, mid)])
        pieces.sort(key=lambda p: p[0])
        self._edges = np.array([p[0] for p in pieces[1:]])
        self._fits = [p[2] for p in pieces]

    @property
    def pieces(self):
        return len(self._fits)

    def __call__(self, zeta):
        zeta = np.asarray(zeta, dtype=float)
        s = np.log(zeta)
        lo, hi = self.domain
        if s.size and (s.min() < lo - 1e-12 or s.max() > hi + 1e-12):
            raise DomainError("zeta outside the interpolation range")
        out = np.zeros(s.shape)
        live = s <= self.cut
        idx = np.searchsorted(self._edges, s[live], side="right")
        part = np.empty(idx.shape)
        for k in np.unique(idx):
            sel = idx == k
            part[sel] = self._fits[k](s[live][sel])
        out[live] = np.exp(part) if self.log_values else part
        return out
