"""Smooth cut-off functions built from exp(-1/u).

All helpers use arithmetic masks instead of branches so that the same source
runs on numpy arrays and, once compiled, on numba scalars.
"""

import numpy as np

from . import _accel

# exp(-1/u) underflows to exactly 0.0 below this argument, so clamping here
# keeps the powers of 1/u finite without changing any value.
_U_MIN = 1.0 / 800.0


def build(jitter):
    """Return ``(smoothstep_derivs, plateau_derivs)`` compiled by ``jitter``."""

    def _psi_derivs(u):
        on = u > _U_MIN
        us = u * on + (1.0 - on) * 1.0
        q = 1.0 / us
        g = np.exp(-q) * on
        q2 = q * q
        g1 = q2 * g
        g2 = (q2 * q2 - 2.0 * q2 * q) * g
        g3 = (q2 * q2 * q2 - 6.0 * q2 * q2 * q + 6.0 * q2 * q2) * g
        return g, g1, g2, g3

    psi_j = jitter(_psi_derivs)

    def smoothstep_derivs(u):
        """Smooth step S with S=0 for u<=0, S=1 for u>=1, and S', S'', S'''."""
        g, g1, g2, g3 = psi_j(u)
        h, h1, h2, h3 = psi_j(1.0 - u)
        h1 = -h1
        h3 = -h3
        d = g + h
        d1 = g1 + h1
        d2 = g2 + h2
        d3 = g3 + h3
        s = g / d
        s1 = (g1 - s * d1) / d
        s2 = (g2 - 2.0 * s1 * d1 - s * d2) / d
        s3 = (g3 - 3.0 * s2 * d1 - 3.0 * s1 * d2 - s * d3) / d
        return s, s1, s2, s3

    step_j = jitter(smoothstep_derivs)

    def plateau_derivs(x, lo_out, lo_in, hi_in, hi_out):
        """Plateau equal to 1 on [lo_in, hi_in] and 0 off (lo_out, hi_out)."""
        alpha = 1.0 / (lo_in - lo_out)
        beta = 1.0 / (hi_out - hi_in)
        l0, l1, l2, l3 = step_j(alpha * (x - lo_out))
        r0, r1, r2, r3 = step_j(beta * (hi_out - x))
        l1 = alpha * l1
        l2 = alpha * alpha * l2
        l3 = alpha * alpha * alpha * l3
        r1 = -beta * r1
        r2 = beta * beta * r2
        r3 = -beta * beta * beta * r3
        p0 = l0 * r0
        p1 = l1 * r0 + l0 * r1
        p2 = l2 * r0 + 2.0 * l1 * r1 + l0 * r2
        p3 = l3 * r0 + 3.0 * l2 * r1 + 3.0 * l1 * r2 + l0 * r3
        return p0, p1, p2, p3

    return step_j, jitter(plateau_derivs)


smoothstep_derivs, plateau_derivs = build(_accel.identity)
