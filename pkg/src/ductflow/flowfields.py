"""Flow-state assembly shared by the irrotational and aligned-vorticity
solvers: density from the Bernoulli relation, Mach-squared fields, sonic
surface extraction, and residual bookkeeping.
"""

import numpy as np

from .errors import DegenerateSonicError, NoSonicPointError
from .fdops import fd_weights


def density_from_bernoulli(gas, speed2, phi_total):
    """Density from B0 + Phi - |u|^2/2 = gamma/(gamma-1) rho^(gamma-1)."""
    g = gas.gamma
    head = gas.B0 + phi_total - 0.5 * speed2
    if np.any(head <= 0.0):
        raise DegenerateSonicError("flow head lost positivity")
    return ((g - 1.0) / g * head) ** (1.0 / (g - 1.0))


def sound_speed_sq(gas, speed2, phi_total):
    g = gas.gamma
    return (g - 1.0) * (gas.B0 + phi_total - 0.5 * speed2)


def mach_squared(gas, u1, u2, u3, phi_total):
    speed2 = u1 ** 2 + u2 ** 2 + u3 ** 2
    return speed2 / sound_speed_sq(gas, speed2, phi_total)


class SonicSurface:
    """Axial station of unit Mach number per cross-section node."""

    def __init__(self, xi, dxi2, dxi3, residual):
        self.xi = xi
        self.dxi2 = dxi2
        self.dxi3 = dxi3
        self.residual = residual

    @property
    def sup(self):
        return float(np.max(np.abs(self.xi)))

    def columns(self, cs):
        return {
            "x2": cs.X2.ravel(),
            "x3": cs.X3.ravel(),
            "xi": self.xi.ravel(),
            "dxi_dx2": self.dxi2.ravel(),
            "dxi_dx3": self.dxi3.ravel(),
        }


def _interp_root(x_window, f_window):
    """Root of the cubic through four nodes bracketing a sign change:
    bisection start, then Newton polish on the interpolant."""
    c = np.polyfit(x_window - x_window[0], f_window, 3)
    lo, hi = x_window[1] - x_window[0], x_window[2] - x_window[0]
    flo = np.polyval(c, lo)
    if flo == 0.0:
        return x_window[0] + lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        fm = np.polyval(c, mid)
        if fm == 0.0:
            break
        if np.sign(fm) == np.sign(flo):
            lo = mid
            flo = fm
        else:
            hi = mid
    t = 0.5 * (lo + hi)
    dc = np.polyder(c)
    for _ in range(8):
        ft = np.polyval(c, t)
        dft = np.polyval(dc, t)
        if dft == 0.0:
            break
        step = ft / dft
        t -= step
        if abs(step) < 1e-15:
            break
    return x_window[0] + t


def sonic_surface(M2, grid, cs=None, monotone_tol=0.0):
    """Extract the unit-Mach surface from a sampled Mach-squared field.

    M2: (n_ax, n2, n3) on the duct grid.  Verifies strict axial monotonicity
    and the presence of exactly one crossing per transverse node.  cs (when
    given) provides the transverse spacings for the surface gradient.
    """
    x = grid.x
    n_ax, n2, n3 = M2.shape
    dM = np.diff(M2, axis=0)
    if np.min(dM) <= monotone_tol:
        i = np.unravel_index(np.argmin(dM), dM.shape)
        raise DegenerateSonicError(
            f"Mach-squared not increasing at node {i}: slope {np.min(dM):.3e}")
    F = M2 - 1.0
    if np.any(F[0] >= 0.0) or np.any(F[-1] <= 0.0):
        raise NoSonicPointError("no interior unit-Mach crossing at some node")

    xi = np.empty((n2, n3))
    res = np.empty_like(xi)
    for i2 in range(n2):
        for i3 in range(n3):
            col = F[:, i2, i3]
            exact = np.flatnonzero(col == 0.0)
            if exact.size:
                xi[i2, i3] = x[exact[0]]
                res[i2, i3] = 0.0
                continue
            k = int(np.flatnonzero(np.diff(np.sign(col)) != 0)[0])
            lo = min(max(k - 1, 0), n_ax - 4)
            t = _interp_root(x[lo: lo + 4], col[lo: lo + 4])
            # polish on a 6-point interpolant and use it for the residual
            lo6 = min(max(k - 2, 0), n_ax - 6)
            xw = x[lo6: lo6 + 6]
            cw = col[lo6: lo6 + 6]
            c6 = np.polyfit(xw - xw[0], cw, 5)
            d6 = np.polyder(c6)
            s = t - xw[0]
            for _ in range(10):
                fs = np.polyval(c6, s)
                dfs = np.polyval(d6, s)
                if dfs == 0.0:
                    break
                step = fs / dfs
                s -= step
                if abs(step) < 1e-15:
                    break
            xi[i2, i3] = xw[0] + s
            res[i2, i3] = np.polyval(c6, s)

    s2 = cs.x2[1] - cs.x2[0] if cs is not None else 1.0
    s3 = cs.x3[1] - cs.x3[0] if cs is not None else 1.0
    dxi2 = np.gradient(xi, s2, axis=0, edge_order=2)
    dxi3 = np.gradient(xi, s3, axis=1, edge_order=2)
    return SonicSurface(xi, dxi2, dxi3, float(np.max(np.abs(res))))


def grid_sobolev_pair(fields, grid, cs, s_full, s_sub, axial_mask,
                      length_scale=1.0):
    """Two finite-difference Sobolev proxies from one derivative sweep:
    order s_full over the whole duct plus order s_sub restricted by the
    axial quadrature mask.  Derivatives are mixed 4th-order differences,
    each factor weighted by the length scale (an equivalent norm)."""
    from .fdops import derivative_matrix
    if isinstance(fields, np.ndarray):
        fields = (fields,)
    w0 = float(length_scale)
    s_max = max(s_full, s_sub)
    D1x = grid.d(1)
    D2t = derivative_matrix(cs.x2, 1).toarray()
    D3t = derivative_matrix(cs.x3, 1).toarray()
    wq_full = grid.quad_w
    wq_sub = grid.quad_w * axial_mask if axial_mask is not None else None
    tot_full = 0.0
    tot_sub = 0.0
    for f in fields:
        layer = {(0, 0, 0): np.asarray(f, dtype=float)}
        for order in range(s_max + 1):
            for alpha, arr in layer.items():
                sq = arr ** 2
                cross = np.sum(sq * cs.weights, axis=(1, 2))
                if order <= s_full:
                    tot_full += w0 ** (2 * order) * float(np.dot(wq_full,
                                                                 cross))
                if wq_sub is not None and order <= s_sub:
                    tot_sub += w0 ** (2 * order) * float(np.dot(wq_sub,
                                                                cross))
            if order == s_max:
                break
            new_layer = {}
            for alpha, arr in layer.items():
                a1, a2, a3 = alpha
                key = (a1 + 1, a2, a3)
                if key not in new_layer:
                    flat = arr.reshape(arr.shape[0], -1)
                    new_layer[key] = (D1x @ flat).reshape(arr.shape)
                key = (a1, a2 + 1, a3)
                if key not in new_layer:
                    new_layer[key] = np.einsum("ab,nbj->naj", D2t, arr)
                key = (a1, a2, a3 + 1)
                if key not in new_layer:
                    new_layer[key] = np.einsum("ab,njb->nja", D3t, arr)
            layer = new_layer
    return float(np.sqrt(tot_full)), float(np.sqrt(tot_sub))


def grid_sobolev_proxy(fields, grid, cs, s, length_scale=1.0,
                       axial_mask=None):
    """Finite-difference H^s proxy of one or several grid fields."""
    if axial_mask is None:
        full, _ = grid_sobolev_pair(fields, grid, cs, s, 0, None,
                                    length_scale=length_scale)
        return full
    _, sub = grid_sobolev_pair(fields, grid, cs, 0, s, axial_mask,
                               length_scale=length_scale)
    return sub


class FlowState:
    """Converged 3-D flow: velocity, density, Mach field, sonic surface,
    optional alignment fields, and residual diagnostics."""

    def __init__(self, gas, grid, cs, u1, u2, u3, phi_total, residuals=None,
                 kappa=None, pi_field=None, vorticity=None):
        self.gas = gas
        self.grid = grid
        self.cs = cs
        self.u1 = u1
        self.u2 = u2
        self.u3 = u3
        self.phi_total = phi_total
        self.speed2 = u1 ** 2 + u2 ** 2 + u3 ** 2
        self.rho = density_from_bernoulli(gas, self.speed2, phi_total)
        self.M2 = self.speed2 / sound_speed_sq(gas, self.speed2, phi_total)
        self.residuals = dict(residuals or {})
        self.kappa = kappa
        self.pi_field = pi_field
        self.vorticity = vorticity
        self.surface = None

    def bernoulli_residual(self):
        g = self.gas.gamma
        bern = 0.5 * self.speed2 + g / (g - 1.0) * self.rho ** (g - 1.0) \
            - self.phi_total
        return float(np.max(np.abs(bern - self.gas.B0)))

    def extract_sonic_surface(self):
        self.surface = sonic_surface(self.M2, self.grid, cs=self.cs)
        return self.surface

    def field_columns(self):
        n_ax = self.grid.n + 1
        X1 = np.broadcast_to(self.grid.x[:, None, None], self.u1.shape)
        X2 = np.broadcast_to(self.cs.X2[None], self.u1.shape)
        X3 = np.broadcast_to(self.cs.X3[None], self.u1.shape)
        cols = {
            "x1": X1.ravel(), "x2": X2.ravel(), "x3": X3.ravel(),
            "u1": self.u1.ravel(), "u2": self.u2.ravel(),
            "u3": self.u3.ravel(),
            "rho": self.rho.ravel(), "M2": self.M2.ravel(),
        }
        if self.kappa is not None:
            cols["kappa"] = self.kappa.ravel()
        if self.pi_field is not None:
            cols["Pi"] = self.pi_field.ravel()
        if self.vorticity is not None:
            cols["w1"] = self.vorticity[0].ravel()
            cols["w2"] = self.vorticity[1].ravel()
            cols["w3"] = self.vorticity[2].ravel()
        return cols
