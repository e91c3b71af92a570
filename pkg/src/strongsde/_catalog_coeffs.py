"""Analytic coefficient functions for the built-in equations.

Every function has the signature ``f(w, i, j, t, x, p)`` and returns the
partial derivative of order ``i`` in time and ``j`` in space of the drift
(``w == 0``) or the diffusion (``w == 1``).  Bodies use only arithmetic and
numpy ufuncs so they work on arrays and compile under numba for scalars.
Unsupported orders return NaN; callers check ``max_order`` beforehand.
"""

import numpy as np

NAN = np.nan


def cir(w, i, j, t, x, p):
    delta = p[0]
    beta = p[1]
    sigma = p[2]
    z = 0.0 * x
    if i > 0:
        return z
    if w == 0:
        if j == 0:
            return delta - beta * x
        if j == 1:
            return z - beta
        return z
    r = np.sqrt(np.abs(x))
    s = np.sign(x)
    if j == 0:
        return sigma * r
    if j == 1:
        return sigma * s / (2.0 * r)
    if j == 2:
        return -sigma / (4.0 * r * r * r)
    if j == 3:
        return 3.0 * sigma * s / (8.0 * r * r * r * r * r)
    return z + NAN


def quintic(w, i, j, t, x, p):
    z = 0.0 * x
    if i > 0:
        return z
    if w == 0:
        if j == 0:
            return -(x * x * x * x * x)
        if j == 1:
            return -5.0 * (x * x * x * x)
        if j == 2:
            return -20.0 * (x * x * x)
        if j == 3:
            return -60.0 * (x * x)
        return z + NAN
    if j == 0:
        return x + z
    if j == 1:
        return z + 1.0
    return z


def gbm(w, i, j, t, x, p):
    c = p[w]
    z = 0.0 * x
    if i > 0:
        return z
    if j == 0:
        return c * x
    if j == 1:
        return z + c
    return z


def sgn_drift(w, i, j, t, x, p):
    z = 0.0 * x
    if i > 0:
        return z
    if w == 1:
        if j == 0:
            return z + 1.0
        return z
    s = np.sign(x)
    if j == 0:
        return s * (1.0 + x)
    if j == 1:
        return s + z
    return z


def sgn_drift_plain(w, i, j, t, x, p):
    z = 0.0 * x
    if i > 0:
        return z
    if w == 1:
        if j == 0:
            return z + 1.0
        return z
    if j == 0:
        return np.sign(x) + z
    return z


def user_linear(w, i, j, t, x, p):
    """a = p0 + p1*x, b = p2 + p3*x; handy for hand-checkable tests."""
    z = 0.0 * x
    if i > 0:
        return z
    c0 = p[2 * w]
    c1 = p[2 * w + 1]
    if j == 0:
        return c0 + c1 * x
    if j == 1:
        return z + c1
    return z
