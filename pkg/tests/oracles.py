"""Reference values built independently of the package, in extended precision."""

import mpmath as mp

mp.mp.dps = 30


def laplace_u(a, b, zeta):
    """U(a, b, zeta) by quadrature of its Laplace integral.

    Valid for a > 0. Non-positive a is reached by the three-term recurrence
    in a, run entirely in 30-digit arithmetic from two quadrature values.
    """
    a, b, zeta = mp.mpf(a), mp.mpf(b), mp.mpf(zeta)
    if a > 0:
        f = lambda t: mp.exp(-zeta * t) * t ** (a - 1) * (1 + t) ** (b - a - 1)
        return mp.quad(f, [0, 1, 10, mp.inf]) / mp.gamma(a)
    m = int(mp.ceil(1 - a))
    top = a + m
    u_hi, u_c = laplace_u(top + 1, b, zeta), laplace_u(top, b, zeta)
    c = top
    for _ in range(m):
        # U(c-1) = -(b - 2c - zeta) U(c) - c(c - b + 1) U(c+1)
        u_lo = -(b - 2 * c - zeta) * u_c - c * (c - b + 1) * u_hi
        u_hi, u_c, c = u_c, u_lo, c - 1
    return u_c


def free_green(x, xp, B, z):
    """Magnetic free Green's function from its closed form, with mpmath's hyperu."""
    x1, x2 = map(mp.mpf, x)
    y1, y2 = map(mp.mpf, xp)
    B, z = mp.mpf(B), mp.mpf(z)
    r2 = (x1 - y1) ** 2 + (x2 - y2) ** 2
    a = (abs(B) - z) / (2 * abs(B))
    phase = mp.exp(1j * B / 2 * (y1 * x2 - x1 * y2) - abs(B) * r2 / 4)
    return complex(phase * mp.gamma(a) * mp.hyperu(a, 1, abs(B) * r2 / 2) / (4 * mp.pi))


def regularised_diagonal(B, z):
    """-(psi(a) + 2 gamma + ln(|B|/2)) / (4 pi) in 30 digits."""
    B, z = mp.mpf(B), mp.mpf(z)
    a = (abs(B) - z) / (2 * abs(B))
    return float(-(mp.digamma(a) + 2 * mp.euler + mp.log(abs(B) / 2)) / (4 * mp.pi))


def bisect(f, lo, hi, iters=200):
    """Plain bisection on a sign change; f(lo) and f(hi) must differ in sign."""
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)
