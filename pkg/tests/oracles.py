"""Independent high-precision reference values (mpmath), kept apart from the code under test."""

import mpmath as mp

mp.mp.dps = 30
PI = mp.pi


def bessel_i0(x) -> float:
    # power series sum (x/2)^(2k) / (k!)^2, independent of numpy and the FFT
    x = mp.mpf(x)
    return float(mp.nsum(lambda k: (x / 2) ** (2 * k) / mp.factorial(k) ** 2, [0, mp.inf]))


def beta_midpoint(lam) -> float:
    lam = mp.mpf(lam)
    return float(1 / (2 * ((1 / (8 * PI) + lam) / 2)))


def quad_periodic(f) -> float:
    return float(mp.quad(f, [0, 0.25, 0.5, 0.75, 1]))
