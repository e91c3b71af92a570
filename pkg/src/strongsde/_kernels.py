"""One-step updates and the drivers that iterate them.

Each step is written once and used in two ways.  Called directly it operates
on numpy arrays (one entry per replication).  Compiled through ``build(njit)``
it operates on scalars inside the numba driver loop.  Because both forms run
the same expression in the same order, the two backends agree to rounding
and, in practice, bitwise.
"""

import numpy as np

from . import _accel

SCHEME_CODES = {
    "euler": 0,
    "milstein": 1,
    "wagner_platen_truncated": 2,
    "tamed_euler": 3,
    "tamed_milstein": 4,
    "drift_implicit_sqrt": 5,
    "taylor15": 6,
}


def build(jitter):
    """Create step functions and a driver compiled with ``jitter``."""

    def euler(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        b = f(1, 0, 0, t, x, p)
        return x + a * h + b * dw

    def milstein(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        b = f(1, 0, 0, t, x, p)
        b1 = f(1, 0, 1, t, x, p)
        return x + a * h + b * dw + 0.5 * b * b1 * (dw * dw - h)

    def wagner_platen(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        at = f(0, 1, 0, t, x, p)
        a1 = f(0, 0, 1, t, x, p)
        a2 = f(0, 0, 2, t, x, p)
        b = f(1, 0, 0, t, x, p)
        bt = f(1, 1, 0, t, x, p)
        b1 = f(1, 0, 1, t, x, p)
        b2 = f(1, 0, 2, t, x, p)
        m = 0.5 * b * b1 * (dw * dw - h)
        r1 = (bt + a * b1 - 0.5 * b * b1 * b1) * dw * h
        r2 = (b * b1 * b1 + b * b * b2) * (dw * dw * dw) / 6.0
        r3 = 0.5 * (at + a * a1 + 0.5 * b * b * a2) * h * h
        return x + a * h + b * dw + m + r1 + r2 + r3

    def taylor15(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        a1 = f(0, 0, 1, t, x, p)
        b = f(1, 0, 0, t, x, p)
        bt = f(1, 1, 0, t, x, p)
        b1 = f(1, 0, 1, t, x, p)
        b2 = f(1, 0, 2, t, x, p)
        gap = a1 * b - bt - a * b1 - 0.5 * b * b * b2
        return wagner_platen_j(f, p, t, x, h, dw, dz, tau) + gap * dz

    def tamed_euler(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        b = f(1, 0, 0, t, x, p)
        return x + a / (1.0 + tau * np.abs(a)) * h + b * dw

    def tamed_milstein(f, p, t, x, h, dw, dz, tau):
        a = f(0, 0, 0, t, x, p)
        b = f(1, 0, 0, t, x, p)
        c = b * f(1, 0, 1, t, x, p)
        at = a / (1.0 + tau * np.abs(a))
        bt = b / (1.0 + tau * np.abs(b))
        ct = c / (1.0 + tau * np.abs(c))
        return x + at * h + bt * dw + 0.5 * ct * (dw * dw - h)

    def drift_implicit_sqrt(f, p, t, x, h, dw, dz, tau):
        # p = (delta, beta, sigma); Y = sqrt(X) solves an implicit step whose
        # positive root is taken in closed form.
        delta = p[0]
        beta = p[1]
        sigma = p[2]
        y = np.sqrt(np.abs(x))
        c = y + 0.5 * sigma * dw
        q = 1.0 + 0.5 * beta * h
        d = (4.0 * delta - sigma * sigma) / 8.0 * h
        y1 = (c + np.sqrt(c * c + 4.0 * q * d)) / (2.0 * q)
        return y1 * y1

    euler_j = jitter(euler)
    milstein_j = jitter(milstein)
    wagner_platen_j = jitter(wagner_platen)
    taylor15_j = jitter(taylor15)
    tamed_euler_j = jitter(tamed_euler)
    tamed_milstein_j = jitter(tamed_milstein)
    drift_implicit_j = jitter(drift_implicit_sqrt)

    def step(code, f, p, t, x, h, dw, dz, tau):
        if code == 0:
            return euler_j(f, p, t, x, h, dw, dz, tau)
        if code == 1:
            return milstein_j(f, p, t, x, h, dw, dz, tau)
        if code == 2:
            return wagner_platen_j(f, p, t, x, h, dw, dz, tau)
        if code == 3:
            return tamed_euler_j(f, p, t, x, h, dw, dz, tau)
        if code == 4:
            return tamed_milstein_j(f, p, t, x, h, dw, dz, tau)
        if code == 5:
            return drift_implicit_j(f, p, t, x, h, dw, dz, tau)
        return taylor15_j(f, p, t, x, h, dw, dz, tau)

    step_j = jitter(step)

    def drive(code, f, p, x0, dW, dZ, use_dz, h, tau, out):
        reps = dW.shape[0]
        k = dW.shape[1]
        for r in range(reps):
            x = x0[r]
            out[r, 0] = x
            for l in range(k):
                dz = 0.0
                if use_dz:
                    dz = dZ[r, l]
                x = step_j(code, f, p, l * h, x, h, dW[r, l], dz, tau)
                out[r, l + 1] = x
        return out

    return {
        "euler": euler_j,
        "milstein": milstein_j,
        "wagner_platen_truncated": wagner_platen_j,
        "taylor15": taylor15_j,
        "tamed_euler": tamed_euler_j,
        "tamed_milstein": tamed_milstein_j,
        "drift_implicit_sqrt": drift_implicit_j,
        "step": step_j,
        "drive": jitter(drive),
    }


NUMPY_OPS = build(_accel.identity)
_NUMBA_OPS = None


def numba_ops():
    global _NUMBA_OPS
    if _NUMBA_OPS is None:
        if not _accel.HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is missing")
        _NUMBA_OPS = build(_accel.njit)
    return _NUMBA_OPS


def run_scheme(scheme, coeffs, x0, dW, h, tau, dZ=None, backend=None):
    """Iterate ``scheme`` over increments ``dW`` of shape (reps, k).

    Returns the grid values, shape (reps, k + 1).
    """
    if scheme not in SCHEME_CODES:
        raise ValueError(f"unknown scheme {scheme!r}")
    backend = backend or _accel.BACKEND
    dW = np.ascontiguousarray(dW, dtype=np.float64)
    if dW.ndim != 2:
        raise ValueError("dW must have shape (reps, k)")
    reps, k = dW.shape
    x0 = np.ascontiguousarray(np.broadcast_to(
        np.asarray(x0, dtype=np.float64), (reps,)))
    use_dz = dZ is not None
    if use_dz:
        dZ = np.ascontiguousarray(dZ, dtype=np.float64)
        if dZ.shape != dW.shape:
            raise ValueError("dZ must have the same shape as dW")
    out = np.empty((reps, k + 1))
    p = coeffs.params
    code = SCHEME_CODES[scheme]
    if backend == "numba":
        ops = numba_ops()
        dz_arg = dZ if use_dz else np.zeros((1, 1))
        ops["drive"](code, coeffs.nb_func, p, x0, dW, dz_arg, use_dz,
                     float(h), float(tau), out)
        return out
    fn = NUMPY_OPS[scheme]
    f = coeffs.func
    out[:, 0] = x0
    x = x0.copy()
    with np.errstate(all="ignore"):
        for l in range(k):
            dz = dZ[:, l] if use_dz else 0.0
            x = fn(f, p, l * h, x, h, dW[:, l], dz, tau)
            out[:, l + 1] = x
    return out
