"""Entrance boundary-data profiles and force perturbations.

Profiles are built so the corner compatibility conditions hold by
construction:

* scalar entrance data (flow-angle potential): gradient and its normal
  derivative vanish on the wall curve;
* tangential entrance velocity pairs: components, their normal derivatives,
  the transverse curl, and the mixed second-derivative conditions vanish on
  the wall curve.

Two families are provided.  "Wall-flat sine" profiles are finite sine-series
combinations (cubed sines), so they double as coefficient lists against the
zero-trace analytic basis; "plateau" profiles vanish identically in a margin
strip, making every compatibility condition exact with superalgebraic
spectral decay.
"""

import numpy as np

from .cutoffs import PlateauWindow
from .errors import DimensionMismatchError
from .jets import Jet


class CrossProfile:
    """Scalar function of the cross-section coordinates with analytic
    derivatives through second order, buildable on the grid or at points."""

    def __init__(self, cs, factors2, factors3, amps, anchor_zero=False):
        # factors*: lists of 1-D callables t -> Jet
        if not (len(factors2) == len(factors3) == len(amps)):
            raise DimensionMismatchError("profile term lists differ in length")
        self.cs = cs
        self._f2 = factors2
        self._f3 = factors3
        self.amps = list(amps)
        self._shift = 0.0
        if anchor_zero:
            anchor = (0.5 * cs.a, 0.5 * cs.b)
            self._shift = float(self.value(np.array([anchor[0]]),
                                           np.array([anchor[1]]))[0, 0])

    def _jets(self, x2, x3, order):
        return ([f(np.asarray(x2, dtype=float), order) for f in self._f2],
                [f(np.asarray(x3, dtype=float), order) for f in self._f3])

    def value(self, x2, x3):
        j2, j3 = self._jets(x2, x3, 0)
        out = sum(a * np.multiply.outer(f2.value, f3.value)
                  for a, f2, f3 in zip(self.amps, j2, j3))
        return out - self._shift

    def derivative(self, x2, x3, k2, k3):
        order = max(k2, k3)
        j2, j3 = self._jets(x2, x3, order)
        return sum(a * np.multiply.outer(f2.derivative(k2), f3.derivative(k3))
                   for a, f2, f3 in zip(self.amps, j2, j3))

    # grid-sampled fields (n2, n3)
    def grid(self, deriv=(0, 0)):
        cs = self.cs
        if deriv == (0, 0):
            return self.value(cs.x2, cs.x3)
        return self.derivative(cs.x2, cs.x3, *deriv)


def _sine_cubed_factor(length, k):
    """t -> sin^3(k pi t / length) as a jet factory (vanishes with first and
    second derivatives at both interval ends)."""
    freq = k * np.pi / length

    def factory(x, order):
        s = (freq * Jet.variable(x, order)).sin()
        return s * s * s

    return factory


def _plateau_factor(length, rise, margin):
    window = PlateauWindow(0.0, length, rise=rise, margin=margin)

    def factory(x, order):
        return window.jet(x, order)

    return factory


def wallflat_sine_profile(cs, terms, anchor_zero=False):
    """terms: iterable of (k2, k3, amplitude) sine-cubed products."""
    f2, f3, amps = [], [], []
    for (k2, k3, amp) in terms:
        f2.append(_sine_cubed_factor(cs.a, int(k2)))
        f3.append(_sine_cubed_factor(cs.b, int(k3)))
        amps.append(float(amp))
    return CrossProfile(cs, f2, f3, amps, anchor_zero=anchor_zero)


def plateau_profile(cs, amplitude=1.0, rise=None, margin=None,
                    anchor_zero=False):
    rise = rise if rise is not None else 0.2 * min(cs.a, cs.b)
    margin = margin if margin is not None else 0.1 * min(cs.a, cs.b)
    return CrossProfile(cs, [_plateau_factor(cs.a, rise, margin)],
                        [_plateau_factor(cs.b, rise, margin)], [amplitude],
                        anchor_zero=anchor_zero)


def cosine_mode_profile(cs, terms):
    """Zero-flux eigenmode combination (wall-normal derivative vanishes);
    the natural family for force perturbations."""

    def cos_factor(length, k):
        freq = k * np.pi / length
        norm = np.sqrt((1.0 if k == 0 else 2.0) / length)

        def factory(x, order):
            return norm * (freq * Jet.variable(x, order)).cos()

        return factory

    f2, f3, amps = [], [], []
    for (k2, k3, amp) in terms:
        f2.append(cos_factor(cs.a, int(k2)))
        f3.append(cos_factor(cs.b, int(k3)))
        amps.append(float(amp))
    return CrossProfile(cs, f2, f3, amps)


# ---------------------------------------------------------------------------
# compatibility residuals
# ---------------------------------------------------------------------------

def scalar_entrance_compat(profile):
    """Max wall residual of the scalar entrance conditions: tangential
    gradient components and their wall-normal derivatives vanish."""
    cs = profile.cs
    d2 = profile.grid((1, 0))
    d3 = profile.grid((0, 1))
    d22 = profile.grid((2, 0))
    d23 = profile.grid((1, 1))
    d33 = profile.grid((0, 2))
    res = [np.max(np.abs(cs.boundary_values(d2))),
           np.max(np.abs(cs.boundary_values(d3))),
           np.max(np.abs(cs.normal_derivative(d22, d23))),
           np.max(np.abs(cs.normal_derivative(d23, d33)))]
    return float(max(res))


def tangential_pair_compat(h2, h3):
    """Max wall residual of the tangential-velocity entrance conditions:
    components, their normal derivatives, the transverse curl, and the
    normal derivatives of the diagonal strains all vanish on the wall."""
    cs = h2.cs
    curl = h3.grid((1, 0)) - h2.grid((0, 1))
    res = [np.max(np.abs(cs.boundary_values(h2.grid()))),
           np.max(np.abs(cs.boundary_values(h3.grid()))),
           np.max(np.abs(cs.normal_derivative(h2.grid((1, 0)),
                                              h2.grid((0, 1))))),
           np.max(np.abs(cs.normal_derivative(h3.grid((1, 0)),
                                              h3.grid((0, 1))))),
           np.max(np.abs(cs.boundary_values(curl))),
           np.max(np.abs(cs.normal_derivative(h2.grid((2, 0)),
                                              h2.grid((1, 1))))),
           np.max(np.abs(cs.normal_derivative(h3.grid((1, 1)),
                                              h3.grid((0, 2)))))]
    return float(max(res))


class ForcePerturbation:
    """Transverse-dependent force potential add-on: amplitude-one field
    g(x1) * W(x') whose wall-normal derivative vanishes identically."""

    def __init__(self, axial_jet_factory, cross_profile):
        self.axial = axial_jet_factory
        self.cross = cross_profile

    @classmethod
    def gaussian_times_modes(cls, cs, center, width, terms):
        def axial(x, order):
            u = Jet.variable(np.asarray(x, dtype=float), order)
            w = (u - center) * (1.0 / width)
            return (-(w * w)).exp()

        return cls(axial, cosine_mode_profile(cs, terms))

    def value_grid(self, x_nodes, cs):
        g = self.axial(x_nodes, 0).value
        return np.multiply.outer(g, self.cross.grid())

    def d1_grid(self, x_nodes, cs):
        g1 = self.axial(x_nodes, 1).derivative(1)
        return np.multiply.outer(g1, self.cross.grid())

    def d2_grid(self, x_nodes, cs):
        g = self.axial(x_nodes, 0).value
        return np.multiply.outer(g, self.cross.grid((1, 0)))

    def d3_grid(self, x_nodes, cs):
        g = self.axial(x_nodes, 0).value
        return np.multiply.outer(g, self.cross.grid((0, 1)))

    def wall_flux_residual(self, x_nodes, cs):
        d2 = self.d2_grid(x_nodes, cs)
        d3 = self.d3_grid(x_nodes, cs)
        return float(np.max(np.abs(cs.normal_derivative(d2, d3))))
