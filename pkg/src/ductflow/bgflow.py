"""One-dimensional accelerating transonic background states.

The duct carries a 1-D base flow driven by an axial force density f(x1):
mass flux rho*u is constant and the Bernoulli quantity

    B = u^2/2 + gamma/(gamma-1) rho^(gamma-1) - Phi,   Phi(x1) = int_{L0}^{x1} f,

equals its entry value B0 everywhere.  The state passes smoothly from
subsonic to supersonic exactly at x1 = 0 when the force satisfies a sign
pattern (negative before 0, simple zero at 0, positive after) and its
integral over [L0, 0] removes precisely the gap between B0 and the critical
enthalpy of the given mass flux.

Each node's state solves the algebraic Bernoulli/mass-flux system on the
correct branch; derivatives to high order come from truncated Taylor (jet)
arithmetic on that algebraic relation -- exactly at the sonic point through
a series expansion -- so no finite differencing enters anywhere.
"""

import numpy as np
from scipy.special import roots_legendre

from .cutoffs import Bump, step_down
from .errors import (AdmissibilityViolationError, InadmissibleDataError,
                     InvalidGeometryError, SolverDivergedError)
from .jets import Jet

_JET_ORDER = 6          # u carried to this order; derived fields one lower
_GL_NODES = 24


class GasConstants:
    """Polytropic gas data and the derived critical (sonic) state."""

    def __init__(self, gamma, rho0, u0):
        if gamma <= 1.0:
            raise InadmissibleDataError("adiabatic exponent must exceed 1")
        if rho0 <= 0.0 or u0 <= 0.0:
            raise InadmissibleDataError("entry density and speed must be positive")
        if u0 ** 2 >= gamma * rho0 ** (gamma - 1.0):
            raise InadmissibleDataError("entry state must be strictly subsonic")
        self.gamma = float(gamma)
        self.rho0 = float(rho0)
        self.u0 = float(u0)

    @property
    def mass_flux(self):
        return self.rho0 * self.u0

    @property
    def B0(self):
        g = self.gamma
        return 0.5 * self.u0 ** 2 + g / (g - 1.0) * self.rho0 ** (g - 1.0)

    @property
    def rho_star(self):
        g = self.gamma
        return (self.mass_flux / np.sqrt(g)) ** (2.0 / (g + 1.0))

    @property
    def u_star(self):
        return self.mass_flux / self.rho_star

    @property
    def critical_enthalpy(self):
        """Value of u^2/2 + gamma/(gamma-1) rho^(gamma-1) at the sonic state."""
        g = self.gamma
        m = self.mass_flux
        return (g + 1.0) / (2.0 * (g - 1.0)) * g ** (2.0 / (g + 1.0)) \
            * m ** (2.0 * (g - 1.0) / (g + 1.0))

    def bernoulli_of_speed(self, u):
        """u^2/2 + gamma/(gamma-1) (m/u)^(gamma-1) (no force potential)."""
        g = self.gamma
        return 0.5 * np.asarray(u) ** 2 + g / (g - 1.0) \
            * (self.mass_flux / np.asarray(u)) ** (g - 1.0)

    def sound_speed_sq_of_speed(self, u):
        g = self.gamma
        return g * (self.mass_flux / np.asarray(u)) ** (g - 1.0)


class ExternalForce:
    """Axial force density with an admissible transonic sign pattern.

    Template: a linear ramp slope*x1 active on the whole duct plus two
    compactly supported lobes away from x1 = 0, the negative one scaled so
    that the integral over [L0, 0] hits the critical-gap target exactly.
    Near x1 = 0 the force is exactly linear, which keeps the sonic-point
    series solvable in closed form.
    """

    def __init__(self, gas, L0, L1, L2=None, slope=None,
                 neg_support=None, pos_support=None, pos_amp=0.0):
        if not L0 < 0 < L1:
            raise InvalidGeometryError("need L0 < 0 < L1")
        self.L0 = float(L0)
        self.L1 = float(L1)
        self.L2 = float(L2) if L2 is not None else 2.0 * float(L1)
        if self.L2 < self.L1:
            raise InvalidGeometryError("extended exit must satisfy L2 >= L1")
        self.gas = gas

        target = gas.critical_enthalpy - gas.B0
        if target >= -1e-14:
            raise InadmissibleDataError(
                "entry state already critical: required force integral "
                f"{target:.3e} is not negative")
        self.target_integral = target

        gap = 0.05 * min(-L0, self.L1)
        if neg_support is None:
            neg_support = (L0 + 0.1 * (-L0), -3.0 * gap)
        if pos_support is None:
            pos_support = (3.0 * gap, self.L1)
        if not (L0 <= neg_support[0] < neg_support[1] <= -gap):
            raise InvalidGeometryError("negative lobe must sit inside (L0, 0)")
        if not (gap <= pos_support[0] < pos_support[1] <= self.L2):
            raise InvalidGeometryError("positive lobe must sit inside (0, L2)")
        self.neg_bump = Bump(*neg_support)
        self.pos_bump = Bump(*pos_support)
        self.pos_amp = float(pos_amp)

        if slope is None:
            slope = 0.5 * (-target) * 2.0 / self.L0 ** 2
        if slope <= 0:
            raise InadmissibleDataError("force slope at the sonic point must be positive")
        self.slope = float(slope)

        self._breaks = np.unique(np.array(
            [self.L0, neg_support[0], neg_support[1], 0.0,
             pos_support[0], pos_support[1], self.L1, self.L2]))
        self._gl_x, self._gl_w = roots_legendre(_GL_NODES)

        self.neg_amp = 0.0
        self._solve_negative_lobe()
        self._tabulate_antiderivative()
        self._check_sign_pattern()

    # -- evaluation --------------------------------------------------------

    def value(self, x):
        x = np.asarray(x, dtype=float)
        out = self.slope * x - self.neg_amp * self.neg_bump(x) \
            + self.pos_amp * self.pos_bump(x)
        return out

    def jet(self, x, order):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        j = self.slope * Jet.variable(x, order) \
            - self.neg_amp * self.neg_bump.jet(x, order) \
            + self.pos_amp * self.pos_bump.jet(x, order)
        return j

    def derivative(self, x, k):
        return self.jet(x, k).derivative(k).reshape(np.shape(x))

    # -- quadrature ----------------------------------------------------------

    def _panel_integral(self, a, b):
        if b <= a:
            return 0.0 if b == a else -self._panel_integral(b, a)
        n_sub = max(1, int(np.ceil((b - a) / 0.2)))
        edges = np.linspace(a, b, n_sub + 1)
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (lo + hi)
            half = 0.5 * (hi - lo)
            total += half * np.dot(self._gl_w, self.value(mid + half * self._gl_x))
        return total

    def integral(self, a, b):
        """High-accuracy integral of the force over [a, b]."""
        pts = [a] + [t for t in self._breaks if a < t < b] + [b]
        return sum(self._panel_integral(lo, hi)
                   for lo, hi in zip(pts[:-1], pts[1:]))

    def _tabulate_antiderivative(self):
        vals = [0.0]
        for lo, hi in zip(self._breaks[:-1], self._breaks[1:]):
            vals.append(vals[-1] + self._panel_integral(lo, hi))
        self._break_cum = np.array(vals)

    def antiderivative(self, x):
        """Phi(x) = int_{L0}^{x} f, vectorized over x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(x)
        idx = np.searchsorted(self._breaks, x, side="right") - 1
        idx = np.clip(idx, 0, len(self._breaks) - 2)
        for i in np.ndindex(x.shape):
            k = idx[i]
            out[i] = self._break_cum[k] + self._panel_integral(self._breaks[k], x[i])
        return out

    def antiderivative_grid(self, nodes):
        """Phi on an ascending grid that starts at L0 (fast path).

        One Gauss panel per grid interval is exact to roundoff because the
        force is smooth and the intervals are short; a cumulative sum then
        gives Phi at every node.
        """
        nodes = np.asarray(nodes, dtype=float)
        lo = nodes[:-1]
        hi = nodes[1:]
        mid = 0.5 * (lo + hi)[:, None]
        half = 0.5 * (hi - lo)[:, None]
        pts = mid + half * self._gl_x[None, :]
        vals = self.value(pts.ravel()).reshape(pts.shape)
        per = (half[:, 0]) * (vals @ self._gl_w)
        return np.concatenate([[0.0], np.cumsum(per)])

    # -- admissibility -------------------------------------------------------

    def _solve_negative_lobe(self):
        # Newton on the scale of the negative lobe (the residual is linear
        # in the amplitude, so this converges in one step and the loop is a
        # guard against quadrature inconsistencies).
        amp = 0.0
        for _ in range(8):
            self.neg_amp = amp
            r = self.integral(self.L0, 0.0) - self.target_integral
            if abs(r) <= 1e-13 * max(1.0, abs(self.target_integral)):
                return
            dr = -self._bump_mass()
            amp = amp - r / dr
        self.neg_amp = amp
        r = self.integral(self.L0, 0.0) - self.target_integral
        if abs(r) > 1e-11:
            raise SolverDivergedError("negative-lobe amplitude solve failed")

    def _bump_mass(self):
        saved = (self.neg_amp, self.slope, self.pos_amp)
        self.neg_amp, self.slope, self.pos_amp = 1.0, 0.0, 0.0
        mass = -self.integral(self.L0, 0.0)
        self.neg_amp, self.slope, self.pos_amp = saved
        return mass

    def _check_sign_pattern(self):
        if self.neg_amp < 0.0:
            raise InadmissibleDataError(
                "base ramp alone already exceeds the critical gap; "
                "reduce the slope parameter")
        xs = np.linspace(self.L0, self.L2, 4001)
        f = self.value(xs)
        bad_neg = np.any(f[xs < -1e-12] >= 0.0)
        bad_pos = np.any(f[xs > 1e-12] <= 0.0)
        if bad_neg or bad_pos:
            raise InadmissibleDataError("force sign pattern violated on the grid")
        if abs(self.value(np.array([0.0]))[0]) > 1e-14:
            raise InadmissibleDataError("force must vanish at the sonic station")


class BackgroundFlow:
    """Sampled transonic base state with analytic derivatives (jets).

    Jets are available for u, rho, c2 (sound speed squared), M2 (Mach
    squared), the type coefficient k11 = 1 - M2, and the lower-order
    coefficient k1; the extended variants a11/a1 appear after extend().
    """

    def __init__(self, gas, force, nodes):
        self.gas = gas
        self.force = force
        self.x = np.asarray(nodes, dtype=float)
        if self.x.ndim != 1 or len(self.x) < 2:
            raise InvalidGeometryError("need a 1-D array of at least 2 nodes")
        if self.x[0] != force.L0:
            raise InvalidGeometryError("grid must start at the duct entrance")
        if np.any(np.diff(self.x) <= 0):
            raise InvalidGeometryError("nodes must be strictly increasing")
        self.Phi = force.antiderivative_grid(self.x)
        self._sonic_series()
        self._solve_nodes()
        self._build_jets()
        self.extension = None

    # -- sonic-point series --------------------------------------------------

    def _bernoulli_poly(self, order):
        """Taylor coefficients of u^2/2 + K u^(1-gamma) around u_star."""
        g = self.gas.gamma
        m = self.gas.mass_flux
        K = g / (g - 1.0) * m ** (g - 1.0)
        us = self.gas.u_star
        coef = np.zeros(order + 1)
        coef[0] = self.gas.critical_enthalpy
        fall = 1.0
        fact = 1.0
        for k in range(1, order + 1):
            fall *= (1.0 - g) - (k - 1)
            fact *= k
            coef[k] = K * fall * us ** (1.0 - g - k) / fact
            if k == 2:
                coef[2] += 0.5
        # first derivative vanishes at the critical speed by construction
        coef[1] = 0.0
        return coef

    def _sonic_series(self):
        J = 10
        E = self._bernoulli_poly(J + 2)
        fj = self.force.jet(np.array([0.0]), J + 1)
        w = np.zeros(J + 2)
        # w_k = f^(k-1)(0)/k! expressed through the force's Taylor coefficients
        for k in range(2, J + 2):
            w[k] = fj.coeffs[k - 1, 0] / k
        s = np.zeros(J + 1)  # s[j] multiplies x^j in u(x) - u_star, s[0] = 0
        s[1] = np.sqrt(w[2] / E[2])
        for n in range(3, J + 2):
            # coefficient of x^n in sum_k E_k s(x)^k with s_{n-1} unset
            acc = np.zeros(n + 1)
            p = np.zeros(n + 1)
            p[0] = 1.0
            for k in range(1, n + 1):
                p = np.convolve(p, s[: n])[: n + 1]
                if k >= 2 and k < len(E):
                    acc[: len(p)] += E[k] * p
            s[n - 1] = (w[n] - acc[n]) / (2.0 * E[2] * s[1])
        self._series = s
        # trust radius: the force is exactly linear near 0, so the series
        # converges up to the nearest lobe edge; back off for safety
        edges = [abs(t) for t in self.force._breaks if t != 0.0
                 and abs(t) > 1e-12]
        self._x_switch = 0.6 * min(edges)

    def _series_u_jet(self, x, order):
        """Jet of u at near-sonic nodes from the sonic series."""
        s = self._series
        J = len(s) - 1
        coeffs = np.zeros((order + 1, len(x)))
        from math import comb
        for k in range(order + 1):
            # Taylor coefficient of u^(k)(x)/k!: sum_j C(j, k) s_j x^(j-k)
            acc = np.zeros(len(x))
            for j in range(k, J + 1):
                acc += comb(j, k) * s[j] * x ** (j - k)
            coeffs[k] = acc
        coeffs[0] += self.gas.u_star
        return Jet(coeffs)

    # -- nodewise branch solve -------------------------------------------------

    def _solve_nodes(self):
        gas = self.gas
        w = gas.B0 + self.Phi
        u = np.empty_like(self.x)
        near = np.abs(self.x) <= self._x_switch
        if np.any(near):
            u[near] = self._series_u_jet(self.x[near], 0).value
        far = ~near
        if np.any(far):
            u[far] = self._branch_solve_vec(w[far], self.x[far] < 0.0)
        self.u_values = u
        resid = np.abs(gas.bernoulli_of_speed(u) - w)
        scale = max(1.0, np.max(np.abs(w)))
        if np.max(resid) > 1e-11 * scale:
            raise SolverDivergedError(
                f"Bernoulli residual {np.max(resid):.3e} after branch solve")

    def _branch_solve_vec(self, w, subsonic):
        """Safeguarded Newton on the Bernoulli relation, vectorized.

        The relation is strictly monotone on each side of the critical
        speed, so bracketing plus Newton with midpoint fallback converges
        for every node simultaneously.
        """
        gas = self.gas
        us = gas.u_star
        g = gas.gamma
        if np.any(w < gas.critical_enthalpy - 1e-13):
            raise SolverDivergedError("Bernoulli level below the critical value")
        rho_h = ((g - 1.0) / g * np.maximum(w, gas.critical_enthalpy)) \
            ** (1.0 / (g - 1.0))
        hi_cap = 10.0 * max(float(np.sqrt(2.0 * np.max(w))), us)
        lo = np.where(subsonic, 1e-12, us)
        hi = np.where(subsonic, us, hi_cap)
        u = np.where(subsonic,
                     np.minimum(gas.mass_flux / rho_h, 0.999 * us),
                     np.maximum(np.sqrt(2.0 * w), 1.001 * us))
        tol = 5e-15 * np.maximum(1.0, np.abs(w))
        for _ in range(100):
            r = gas.bernoulli_of_speed(u) - w
            active = np.abs(r) > tol
            if not np.any(active):
                break
            # bracket update: the relation decreases on the subsonic side
            # and increases on the supersonic side
            too_small = np.where(subsonic, r > 0, r < 0)
            lo = np.where(active & too_small, u, lo)
            hi = np.where(active & ~too_small, u, hi)
            slope = u - gas.sound_speed_sq_of_speed(u) / u
            with np.errstate(divide="ignore", invalid="ignore"):
                u_new = u - r / slope
            bad = ~np.isfinite(u_new) | (u_new <= lo) | (u_new >= hi)
            u_new = np.where(bad, 0.5 * (lo + hi), u_new)
            u = np.where(active, u_new, u)
        else:
            r = gas.bernoulli_of_speed(u) - w
            if np.max(np.abs(r) - 10 * tol) > 0:
                raise SolverDivergedError("branch Newton did not converge")
        return u

    def _u_jet_at_nodes(self, order):
        """Jet of u on all nodes: series near the sonic point, otherwise an
        order-by-order solve of the Bernoulli relation."""
        x = self.x
        near = np.abs(x) <= self._x_switch
        coeffs = np.zeros((order + 1, len(x)))
        if np.any(near):
            coeffs[:, near] = self._series_u_jet(x[near], order).coeffs
        far = ~near
        if np.any(far):
            xf = x[far]
            fj = self.force.jet(xf, max(order - 1, 0))
            w = np.zeros((order + 1, len(xf)))
            w[0] = self.gas.B0 + self.Phi[far]
            for k in range(1, order + 1):
                w[k] = fj.coeffs[k - 1] / k
            uf = np.zeros((order + 1, len(xf)))
            uf[0] = self.u_values[far]
            g0 = uf[0] - self.gas.sound_speed_sq_of_speed(uf[0]) / uf[0]
            for k in range(1, order + 1):
                # residual with coefficient k left at zero
                r = self._bernoulli_on_jet(Jet(uf.copy()))
                uf[k] = (w[k] - r.coeffs[k]) / g0
            coeffs[:, far] = uf
        return Jet(coeffs)

    def _bernoulli_on_jet(self, ujet):
        g = self.gas.gamma
        m = self.gas.mass_flux
        K = g / (g - 1.0) * m ** (g - 1.0)
        return 0.5 * ujet * ujet + K * ujet.power(1.0 - g)

    # -- assembled jets ----------------------------------------------------------

    def _build_jets(self):
        g = self.gas.gamma
        m = self.gas.mass_flux
        u = self._u_jet_at_nodes(_JET_ORDER)
        rho = m / u
        c2 = g * rho.power(g - 1.0)
        M2 = (u * u) / c2
        k11 = 1.0 - M2
        fj = Jet(self.force.jet(self.x, _JET_ORDER).coeffs)
        uprime = u.shift()
        k1 = (fj.truncate(_JET_ORDER - 1)
              - (g + 1.0) * u.truncate(_JET_ORDER - 1) * uprime) \
            / c2.truncate(_JET_ORDER - 1)
        self.jets = {"u": u, "rho": rho, "c2": c2, "M2": M2,
                     "k11": k11, "k1": k1, "f": fj}

    # -- public sampling -----------------------------------------------------------

    def sample(self, name, deriv=0):
        if name == "Phi":
            if deriv == 0:
                return self.Phi.copy()
            return self.jets["f"].derivative(deriv - 1)
        return self.jets[name].derivative(deriv)

    def mach_slope_at_sonic(self):
        """(M2)'(0) from the stored jets (only valid when 0 is a node)."""
        i = int(np.argmin(np.abs(self.x)))
        if abs(self.x[i]) > 1e-12:
            raise InvalidGeometryError("sonic station is not a grid node")
        return self.jets["M2"].derivative(1)[i]

    def profile_columns(self):
        return {
            "x1": self.x.copy(),
            "rho": self.sample("rho"),
            "u": self.sample("u"),
            "c2": self.sample("c2"),
            "M2": self.sample("M2"),
            "k11": self.sample("k11"),
            "k1": self.sample("k1"),
            "f": self.sample("f"),
            "Phi": self.sample("Phi"),
        }

    # -- extension to the longer duct ---------------------------------------------

    def extend(self, ell=None, k0=None, d0=None):
        """Attach the blended coefficients used on the extended duct.

        a11 interpolates between k11 and 1 across [L1+2*ell, L1+4*ell];
        a1 interpolates between k1 and the constant -k0 across
        [L1+ell, L1+2*ell].  Requires this flow to be sampled through L2.
        """
        L1, L2 = self.force.L1, self.force.L2
        if self.x[-1] < L2 - 1e-12:
            raise InvalidGeometryError("extend() needs samples through L2")
        if ell is None:
            ell = L1 / 20.0
        if L1 + 4.0 * ell > L2 + 1e-12:
            raise InvalidGeometryError("blend interval exceeds the extended duct")
        blend_a11 = step_down(L1 + 2.0 * ell, L1 + 4.0 * ell)
        blend_a1 = step_down(L1 + ell, L1 + 2.0 * ell)
        z1 = blend_a11.jet(self.x, _JET_ORDER)
        z2 = blend_a1.jet(self.x, _JET_ORDER - 1)
        if k0 is None or d0 is None:
            found_k0, found_d0, _ = search_extension_constants(
                self, z1, z2, ell)
            k0 = k0 if k0 is not None else found_k0
            d0 = d0 if d0 is not None else found_d0
        a11 = self.jets["k11"] * z1 + (1.0 - z1)
        a1 = self.jets["k1"] * z2 - k0 * (1.0 - z2)
        self.extension = {
            "ell": ell, "k0": k0, "d0": d0,
            "a11": a11, "a1": a1, "zeta1": z1, "zeta2": z2,
        }
        report = verify_admissibility(self)
        self.extension["kappa_star"] = report.kappa_star
        return self


class AdmissibilityReport:
    """Outcome of the multiplier-inequality verification."""

    def __init__(self, kappa_star, d0, k0, margins, extended):
        self.kappa_star = kappa_star
        self.d0 = d0
        self.k0 = k0
        self.margins = margins
        self.extended = extended

    def as_dict(self):
        out = {"kappa_star": self.kappa_star, "d0": self.d0,
               "extended": float(self.extended)}
        if self.k0 is not None:
            out["k0"] = self.k0
        for key, val in self.margins.items():
            out[f"margin_{key}"] = val
        return out


def _sign_margins(k1, dk11, j_range):
    """max over nodes of 2*k1 + (2j-1)*k11' for each j (must be negative)."""
    return {j: float(np.max(2.0 * k1 + (2 * j - 1) * dk11)) for j in j_range}


def _multiplier_margins(x, k1, k11, dk11, d0, j_range):
    """min over nodes of (k1 + j*k11')*d - ((k11*d)')/2 with d = 6(x-d0)."""
    d = 6.0 * (x - d0)
    dd = 6.0
    out = {}
    for j in j_range:
        expr = (k1 + j * dk11) * d - 0.5 * (dk11 * d + k11 * dd)
        out[j] = float(np.min(expr))
    return out


def search_extension_constants(bg, z1, z2, ell, kappa_floor=None):
    """Smallest ladder values of (k0, d0) making the extended inequalities
    hold on every node, with the sign margins at least as good as on the
    physical duct."""
    x = bg.x
    k1 = bg.jets["k1"].value
    k11 = bg.jets["k11"].value
    dk11 = bg.jets["k11"].derivative(1)
    base = _sign_margins(k1[x <= bg.force.L1 + 1e-12],
                         dk11[x <= bg.force.L1 + 1e-12], range(4))
    kappa_core = -max(base.values())
    if kappa_core <= 0:
        raise AdmissibilityViolationError(
            f"core sign inequalities fail: worst margin {max(base.values()):.3e}")
    if kappa_floor is None:
        kappa_floor = 0.5 * kappa_core

    k0 = 1.0
    for _ in range(40):
        a1_j = bg.jets["k1"] * z2 - k0 * (1.0 - z2)
        a11_j = bg.jets["k11"] * z1 + (1.0 - z1)
        s = _sign_margins(a1_j.value, a11_j.derivative(1), range(5))
        if max(s.values()) <= -kappa_floor:
            break
        k0 *= 2.0
    else:
        raise AdmissibilityViolationError("no ladder k0 satisfies the sign bounds")

    a1v = a1_j.value
    a11v = a11_j.value
    da11 = a11_j.derivative(1)
    d0 = max(bg.x[-1], 0.0) + 1.0
    for _ in range(40):
        m = _multiplier_margins(x, a1v, a11v, da11, d0, range(4))
        if min(m.values()) >= 4.0:
            return k0, d0, min(m.values())
        d0 *= 2.0
    raise AdmissibilityViolationError("no ladder d0 satisfies the multiplier bounds")


def verify_admissibility(bg):
    """Check every structural inequality the solvers rely on.

    Returns the report for the extended coefficients when the flow has an
    extension attached, otherwise for the physical duct only.  Raises
    AdmissibilityViolationError when any inequality fails.
    """
    x = bg.x
    if bg.extension is not None:
        ext = bg.extension
        k1 = ext["a1"].value
        k11 = ext["a11"].value
        dk11 = ext["a11"].derivative(1)
        sign_range = range(5)
        d0 = ext["d0"]
        k0 = ext["k0"]
    else:
        k1 = bg.jets["k1"].value
        k11 = bg.jets["k11"].value
        dk11 = bg.jets["k11"].derivative(1)
        sign_range = range(4)
        k0 = None
        d0 = max(x[-1], 0.0) + 1.0
        for _ in range(40):
            m = _multiplier_margins(x, k1, k11, dk11, d0, range(4))
            if min(m.values()) >= 4.0:
                break
            d0 *= 2.0
        else:
            raise AdmissibilityViolationError("no d0 satisfies the multiplier bounds")

    signs = _sign_margins(k1, dk11, sign_range)
    kappa_star = -max(signs.values())
    if kappa_star <= 0.0:
        worst_j = max(signs, key=signs.get)
        worst_i = int(np.argmax(2.0 * k1 + (2 * worst_j - 1) * dk11))
        raise AdmissibilityViolationError(
            f"sign inequality fails at node x1={x[worst_i]:.6g}, j={worst_j}")
    mult = _multiplier_margins(x, k1, k11, dk11, d0, range(4))
    if min(mult.values()) < 4.0:
        worst_j = min(mult, key=mult.get)
        raise AdmissibilityViolationError(
            f"multiplier inequality below 4 for j={worst_j}: {mult[worst_j]:.6g}")
    if np.any(6.0 * (x - d0) >= 0.0):
        raise AdmissibilityViolationError("multiplier weight must stay negative")

    margins = {f"sign_j{j}": -signs[j] for j in signs}
    margins.update({f"mult_j{j}": mult[j] for j in mult})
    return AdmissibilityReport(kappa_star, d0, k0, margins,
                               extended=bg.extension is not None)


def make_admissible_force(gas, L0, L1, **kwargs):
    return ExternalForce(gas, L0, L1, **kwargs)


def solve_background(gas, force, nodes):
    return BackgroundFlow(gas, force, nodes)


def extend_background(bg, ell=None, k0=None, d0=None):
    """Blend the coefficients past the physical exit (flow must already be
    sampled through the extended duct)."""
    return bg.extend(ell=ell, k0=k0, d0=d0)
