"""Independent reference implementations used by the tests.

Written straight from the model formulas in arbitrary precision (mpmath);
they share no code with the package.
"""

import mpmath as mp

mp.mp.dps = 50


def logistic4(t, a, b, c, h):
    t = mp.mpf(t)
    return a + b * t ** h / (c ** h + t ** h)


def beta_curve(t, a, b, d1, d2, scal):
    t, d1, d2 = mp.mpf(t), mp.mpf(d1), mp.mpf(d2)
    const = (d1 + d2) ** (d1 + d2) / (d1 ** d1 * d2 ** d2)
    u = t / scal
    return a + b * const * u ** d1 * (1 - u) ** d2


def central_difference(fn, t, step=mp.mpf("1e-20")):
    t = mp.mpf(t)
    return (fn(t + step) - fn(t - step)) / (2 * step)


def slope(family, theta, t, scal=None):
    a, b, p, q = (mp.mpf(v) for v in theta)
    if family == "4pll":
        return central_difference(lambda s: logistic4(s, a, b, p, q), t)
    return central_difference(lambda s: beta_curve(s, a, b, p, q, mp.mpf(scal)), t)


def lambda_constant(fold=1.5, duration=45):
    return mp.log(fold, 2) / duration
