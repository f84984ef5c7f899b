"""Smooth cutoff and window functions with exact jet evaluation.

Every axial cutoff and every boundary-data window in the suite comes from
this single audited implementation: a C-infinity one-sided kernel
exp(-1/t), the monotone step built from it, and tensor plateau windows.
All of them evaluate values *and* derivatives (through jets), so cutoff
derivatives entering coefficient assembly are analytic, never differenced.
"""

import numpy as np

from .jets import Jet

# exp(-1/t) underflows to exactly 0.0 below this; treat as identical zero
# so the 1/t jet never produces inf*0.
_T_FLOOR = 1.0 / 700.0


def _kernel_jet(t_jet):
    """Jet of k(t) = exp(-1/t) for t > 0, extended by 0 for t <= 0."""
    t0 = np.asarray(t_jet.value, dtype=float)
    safe = np.where(t0 > _T_FLOOR, t0, 1.0)
    tt = Jet(np.concatenate([safe[None], t_jet.coeffs[1:]], axis=0))
    out = (-(1.0 / tt)).exp()
    mask = (t0 > _T_FLOOR).astype(float)
    return Jet(out.coeffs * mask[None])


def smoothstep_jet(t_jet):
    """Jet of the standard C-infinity step: 0 for t<=0, 1 for t>=1."""
    a = _kernel_jet(t_jet)
    b = _kernel_jet(1.0 - t_jet)
    # Away from (0,1) one kernel is identically 0 and the other positive,
    # so the quotient is exact there as well.
    return a / (a + b)


class SmoothStep:
    """Monotone C-infinity transition between two plateau values.

    value(x) = lo for x <= x0, hi for x >= x1 when ascending
    (swap for descending); strictly monotone in between.
    """

    def __init__(self, x0, x1, lo=0.0, hi=1.0):
        if not x1 > x0:
            raise ValueError("SmoothStep needs x1 > x0")
        self.x0 = float(x0)
        self.x1 = float(x1)
        self.lo = float(lo)
        self.hi = float(hi)

    def jet(self, x, order):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        t = Jet.variable((x - self.x0) / (self.x1 - self.x0), order)
        s = smoothstep_jet(t)
        # chain rule for the affine reparametrization
        scale = (1.0 / (self.x1 - self.x0)) ** np.arange(order + 1)
        coeffs = s.coeffs * scale.reshape((order + 1,) + (1,) * x.ndim)
        coeffs = coeffs * (self.hi - self.lo)
        coeffs[0] += self.lo
        return Jet(coeffs)

    def __call__(self, x):
        return self.jet(x, 0).value.reshape(np.shape(x))

    def derivative(self, x, k):
        out = self.jet(x, k).derivative(k)
        return out.reshape(np.shape(x))


def step_down(x_hi_end, x_lo_start):
    """C-infinity cutoff equal to 1 for x <= x_hi_end, 0 for x >= x_lo_start."""
    return SmoothStep(x_hi_end, x_lo_start, lo=1.0, hi=0.0)


def step_up(x_lo_end, x_hi_start):
    """C-infinity cutoff equal to 0 for x <= x_lo_end, 1 for x >= x_hi_start."""
    return SmoothStep(x_lo_end, x_hi_start, lo=0.0, hi=1.0)


class PlateauWindow:
    """1-D window that is identically 0 in a margin next to each end of
    [a0, a1], rises C-infinity smoothly, and is identically 1 in the middle.

    Used for corner-flat boundary data: the window and all its derivatives
    vanish on [a0, a0+margin] and [a1-margin, a1].
    """

    def __init__(self, a0, a1, rise, margin=0.0):
        if margin < 0 or rise <= 0:
            raise ValueError("PlateauWindow needs rise > 0 and margin >= 0")
        if not (a1 - a0) > 2 * (rise + margin):
            raise ValueError("PlateauWindow: interval too short for rise+margin")
        self.up = step_up(a0 + margin, a0 + margin + rise)
        self.down = step_down(a1 - margin - rise, a1 - margin)

    def jet(self, x, order):
        return self.up.jet(x, order) * self.down.jet(x, order)

    def __call__(self, x):
        return self.jet(x, 0).value.reshape(np.shape(x))

    def derivative(self, x, k):
        return self.jet(x, k).derivative(k).reshape(np.shape(x))


class Bump:
    """Nonnegative C-infinity bump supported exactly on [a0, a1]."""

    def __init__(self, a0, a1):
        if not a1 > a0:
            raise ValueError("Bump needs a1 > a0")
        self.a0 = float(a0)
        self.a1 = float(a1)

    def jet(self, x, order):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        w = self.a1 - self.a0
        t = Jet.variable((x - self.a0) / w, order)
        val = _kernel_jet(t) * _kernel_jet(1.0 - t)
        scale = (1.0 / w) ** np.arange(order + 1)
        # normalize so the peak value is 1 (kernel(1/2)^2 = e^-4)
        peak = np.exp(-4.0)
        return Jet(val.coeffs * scale.reshape((order + 1,) + (1,) * x.ndim)
                   / peak)

    def __call__(self, x):
        return self.jet(x, 0).value.reshape(np.shape(x))

    def derivative(self, x, k):
        return self.jet(x, k).derivative(k).reshape(np.shape(x))
