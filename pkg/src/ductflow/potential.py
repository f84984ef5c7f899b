"""Nonlinear irrotational transonic solver.

The full potential splits as (background) + eps*(entrance lift) + psi, where
the lift carries the prescribed entrance flow angles into the duct on a
window next to the entrance and psi solves a fixed-point problem: each
iterate freezes the quasilinear coefficients and the source at the previous
state and calls the linear type-changing solver.  The ball radius sqrt(eps)
certifies every iterate; contraction is monitored in the discrete H1 norm.
"""

import numpy as np

from .boundary import scalar_entrance_compat
from .cutoffs import step_down
from .errors import (BallEscapeError, CompatibilityError, NonContractionError,
                     StateTooLargeError)
from .flowfields import FlowState
from .mixed import assemble_coefficients, solve_linear_mixed
from .xsection import SpectralField


class PotentialProblem:
    """Inputs for one irrotational solve."""

    def __init__(self, disc, bg, eps, h0=None, phi0=None,
                 fp_tol=1e-10, max_iter=40, sigma_ladder=None, gate_rel=None,
                 compat_tol=1e-8):
        self.disc = disc
        self.bg = bg
        self.eps = float(eps)
        self.h0 = h0
        self.phi0 = phi0
        self.fp_tol = fp_tol
        self.max_iter = max_iter
        self.sigma_ladder = sigma_ladder
        self.gate_rel = gate_rel
        self.delta0 = np.sqrt(self.eps) if self.eps > 0 else 0.0
        # finest structural length of the entrance machinery: the lift
        # window occupies one twentieth of the subsonic run-up
        self.ball_scale = abs(disc.duct.x[0]) / 20.0
        if h0 is not None:
            res = scalar_entrance_compat(h0)
            if res > compat_tol:
                raise CompatibilityError(
                    f"entrance datum violates the corner conditions: {res:.3e}")
        if phi0 is not None:
            wall = phi0.wall_flux_residual(disc.duct.x, disc.cs)
            if wall > compat_tol:
                raise CompatibilityError(
                    f"force perturbation wall flux {wall:.3e} above tolerance")


def boundary_lift(problem):
    """Lift fields psi0 = (entrance window)(x1) * h0(x'): value, first and
    second derivatives on the duct grid (all analytic)."""
    disc = problem.disc
    cs = disc.cs
    x = disc.duct.x
    nd = len(x)
    L0 = x[0]
    window = step_down(0.95 * L0, 0.90 * L0)
    wj = window.jet(x, 2)
    eta = wj.value
    eta1 = wj.derivative(1)
    eta2 = wj.derivative(2)
    zero = np.zeros((nd, cs.n2, cs.n3))
    if problem.h0 is None:
        return {k: zero.copy() for k in
                ("psi0", "d1", "d2", "d3", "d11", "d12", "d13",
                 "d22", "d23", "d33")}
    h = problem.h0.grid()
    h2 = problem.h0.grid((1, 0))
    h3 = problem.h0.grid((0, 1))
    h22 = problem.h0.grid((2, 0))
    h23 = problem.h0.grid((1, 1))
    h33 = problem.h0.grid((0, 2))

    def prof(a, w):
        return np.multiply.outer(w, a)

    return {
        "psi0": prof(h, eta),
        "d1": prof(h, eta1),
        "d2": prof(h2, eta),
        "d3": prof(h3, eta),
        "d11": prof(h, eta2),
        "d12": prof(h2, eta1),
        "d13": prof(h3, eta1),
        "d22": prof(h22, eta),
        "d23": prof(h23, eta),
        "d33": prof(h33, eta),
    }


def _state_gradient(problem, sol_duct, lift):
    """Velocity perturbation of the potential split: grad(psi) + eps
    grad(lift).  sol_duct: (A0, A1) mode components on the duct or None."""
    disc = problem.disc
    eps = problem.eps
    b = disc.basis
    if sol_duct is None:
        v1 = eps * lift["d1"].copy()
        v2 = eps * lift["d2"].copy()
        v3 = eps * lift["d3"].copy()
    else:
        A0, A1 = sol_duct
        v1 = b.synthesize_slice(A1.T) + eps * lift["d1"]
        v2 = np.einsum("pij,np->nij", b.d2, A0.T) + eps * lift["d2"]
        v3 = np.einsum("pij,np->nij", b.d3, A0.T) + eps * lift["d3"]
    return v1, v2, v3


def source_field(problem, coeffs, v1, v2, v3, lift):
    """Right-hand side at the frozen state: background-shear quadratic terms,
    force-perturbation forcing, and the lift's contribution through the
    frozen coefficients."""
    disc = problem.disc
    bg = problem.bg
    eps = problem.eps
    nd = disc.i_exit + 1
    g = bg.gas.gamma
    c2 = bg.sample("c2")[:nd, None, None]
    ub = bg.sample("u")[:nd, None, None]
    ub1 = bg.sample("u", 1)[:nd, None, None]
    kbar1 = bg.sample("k1")[:nd, None, None]

    if problem.phi0 is not None:
        p0 = problem.phi0.value_grid(disc.duct.x, disc.cs)
        p0_1 = problem.phi0.d1_grid(disc.duct.x, disc.cs)
        p0_2 = problem.phi0.d2_grid(disc.duct.x, disc.cs)
        p0_3 = problem.phi0.d3_grid(disc.duct.x, disc.cs)
    else:
        p0 = p0_1 = p0_2 = p0_3 = np.zeros((nd, disc.cs.n2, disc.cs.n3))

    F0 = -ub1 / c2 * ((g - 1.0) * eps * p0
                      - (g + 1.0) / 2.0 * v1 ** 2
                      - (g - 1.0) / 2.0 * (v2 ** 2 + v3 ** 2)) \
        - eps / c2 * (ub * p0_1 + v1 * p0_1 + v2 * p0_2 + v3 * p0_3)

    k11 = coeffs.duct_slice("a11")
    k12 = coeffs.duct_slice("a12")
    k13 = coeffs.duct_slice("a13")
    k22 = coeffs.duct_slice("a22")
    k23 = coeffs.duct_slice("a23")
    k33 = coeffs.duct_slice("a33")
    lift_second = (k11 * lift["d11"] + 2.0 * k12 * lift["d12"]
                   + 2.0 * k13 * lift["d13"] + k22 * lift["d22"]
                   + 2.0 * k23 * lift["d23"] + k33 * lift["d33"])
    return F0 - eps * lift_second - eps * kbar1 * lift["d1"]


def entrance_source_compat(problem, F):
    """Wall-normal derivative of the source on the entrance circle (needed
    by the corner regularity of the linear theory).

    Measured with 4th-order transverse stencils; the attainable floor is the
    truncation error of those stencils on the cross grid, so this is a
    sanity diagnostic, not a machine-precision certificate (the data-level
    corner conditions carry the tight tolerances).
    """
    from .fdops import derivative_matrix
    cs = problem.disc.cs
    slice0 = F[0]
    D2 = derivative_matrix(cs.x2, 1).toarray()
    D3 = derivative_matrix(cs.x3, 1).toarray()
    d2 = np.einsum("ab,bj->aj", D2, slice0)
    d3 = np.einsum("ab,jb->ja", D3, slice0)
    return float(np.max(np.abs(cs.normal_derivative(d2, d3))))


class PotentialSolution:
    """Converged irrotational flow with iteration history."""

    def __init__(self, problem, psi, lift, state, history, reports):
        self.problem = problem
        self.psi = psi          # SpectralField on the duct
        self.lift = lift
        self.state = state      # FlowState
        self.history = history
        self.reports = reports

    @property
    def contraction_ratios(self):
        d = self.history["diffs"]
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]

    def iteration_log(self):
        out = {"iterations": float(len(self.history["diffs"]))}
        for i, d in enumerate(self.history["diffs"]):
            out[f"diff_h1_{i}"] = d
        for i, r in enumerate(self.contraction_ratios):
            out[f"ratio_{i}"] = r
        for i, nrm in enumerate(self.history["ball_norms"]):
            out[f"ball_h4_{i}"] = nrm
        out["ball_radius"] = self.problem.delta0
        return out


def fixed_point_solve(problem):
    """Iterate the frozen-coefficient linear solves from the zero state."""
    disc = problem.disc
    bg = problem.bg
    eps = problem.eps
    lift = boundary_lift(problem)

    psi_components = None  # (A0, A1) on the duct
    psi_field = SpectralField.zeros(disc.basis, disc.duct)
    diffs = []
    ball_norms = []
    ratios = []
    reports = []
    last_residuals = None

    h = disc.full.h
    ladder = problem.sigma_ladder
    if ladder is None:
        from .mixed import default_sigma_ladder
        ladder = default_sigma_ladder(stop=0.5 * h * h, h=h)

    for it in range(problem.max_iter):
        v1, v2, v3 = _state_gradient(problem, psi_components, lift)
        coeffs = assemble_coefficients(disc, bg,
                                       state={"v1": v1, "v2": v2, "v3": v3},
                                       eps=eps, phi0=problem.phi0)
        F = source_field(problem, coeffs, v1, v2, v3, lift)
        psi_new, sol_ext, rep = solve_linear_mixed(
            coeffs, F, sigma_ladder=ladder,
            gate_rel=problem.gate_rel)
        reports.append(rep)
        nd = disc.i_exit + 1
        comps = (sol_ext.A0[:, :nd], sol_ext.A1[:, :nd])
        new_field = SpectralField(disc.basis, disc.duct, comps[0].copy())

        ball = new_field.norm_sobolev(4, length_scale=problem.ball_scale)
        ball_norms.append(ball)
        if eps > 0.0 and ball > problem.delta0:
            raise BallEscapeError(
                f"iterate {it} left the sqrt(eps) ball: {ball:.3e} > "
                f"{problem.delta0:.3e}", norms=ball_norms)

        diff = (new_field - psi_field).norm_h1()
        diffs.append(diff)
        if len(diffs) >= 2 and diffs[-2] > 0:
            ratios.append(diffs[-1] / diffs[-2])
            if len(ratios) >= 2 and ratios[-1] > 1.0 and ratios[-2] > 1.0:
                raise NonContractionError(
                    f"ratios {ratios[-2]:.3f}, {ratios[-1]:.3f} exceed 1")
        psi_field = new_field
        psi_components = comps
        converged = diff <= problem.fp_tol
        if converged or (eps == 0.0 and it == 0 and diff == 0.0):
            last_residuals = _final_residual(problem, coeffs, F, sol_ext)
            break
    else:
        raise NonContractionError(
            f"no convergence in {problem.max_iter} iterations "
            f"(last diff {diffs[-1]:.3e})")

    history = {"diffs": diffs, "ratios": ratios, "ball_norms": ball_norms}
    state = _assemble_flow_state(problem, psi_components, lift,
                                 last_residuals)
    return PotentialSolution(problem, psi_field, lift, state, history,
                             reports)


def _final_residual(problem, coeffs, F, sol_ext):
    """Residual of the quasilinear equation at the last iterate, in the
    interval-averaged form the scheme controls plus the nodal form."""
    disc = problem.disc
    from .mixed import GalerkinSystem
    system = GalerkinSystem(coeffs)
    G_full = disc.extension.extend_samples(np.asarray(F))
    G_modes = SpectralField.analyze(G_full, disc.basis, disc.full).coeffs
    rb = system.residual_box(sol_ext.A0, sol_ext.A1, sol_ext.A2, G_modes)
    nd = disc.i_exit + 1
    rb_duct = rb[:, : nd - 1]
    l2 = float(np.sqrt(disc.full.h * np.sum(rb_duct ** 2)))
    linf = float(np.max(np.abs(rb_duct)))
    return {"equation_residual_l2": l2, "equation_residual_max": linf}


def _assemble_flow_state(problem, psi_components, lift, residuals):
    disc = problem.disc
    bg = problem.bg
    eps = problem.eps
    nd = disc.i_exit + 1
    v1, v2, v3 = _state_gradient(problem, psi_components, lift)
    ub = bg.sample("u")[:nd, None, None]
    u1 = ub + v1
    phi_total = bg.Phi[:nd, None, None] * np.ones_like(u1)
    if problem.phi0 is not None:
        phi_total = phi_total + eps * problem.phi0.value_grid(disc.duct.x,
                                                              disc.cs)
    res = dict(residuals or {})
    state = FlowState(bg.gas, disc.duct, disc.cs, u1, v2, v3, phi_total,
                      residuals=res)
    res["bernoulli"] = state.bernoulli_residual()
    res["wall_normal_velocity"] = float(np.max(np.abs(
        disc.cs.normal_derivative(v2, v3))))
    ent2 = v2[0] - (eps * problem.h0.grid((1, 0)) if problem.h0 is not None
                    else 0.0)
    ent3 = v3[0] - (eps * problem.h0.grid((0, 1)) if problem.h0 is not None
                    else 0.0)
    res["entrance_angle"] = float(max(np.max(np.abs(ent2)),
                                      np.max(np.abs(ent3))))
    state.residuals = res
    state.extract_sonic_surface()
    return state
