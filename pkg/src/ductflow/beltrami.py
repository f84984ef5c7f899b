"""Transonic flows with velocity-aligned vorticity.

The vorticity of such a flow is kappa * rho * u with the alignment factor
kappa conserved along streamlines, so each fixed-point sweep has four
stages:

1. transport kappa backward along the frozen streamlines to the entrance
   (method of characteristics, classical RK4, bicubic evaluation at the
   characteristic feet);
2. solve an auxiliary Poisson unknown whose gradient repairs the curl
   source so it becomes exactly divergence-free after linearization;
3. split the repaired curl system into a vector-potential part plus a
   harmonic-potential part fed by the entrance tangential data (closed-form
   axial modes);
4. correct the divergence balance through the type-changing scalar solve
   and update the velocity.

All entrance data enters through profiles whose wall compatibility is exact
by construction (the alignment factor vanishes identically on the wall).
"""

import numpy as np
from scipy import ndimage

from .boundary import tangential_pair_compat
from .errors import (BallEscapeError, CompatibilityError,
                     DataInconsistencyError, GeometryViolationError,
                     InvalidSourceError, NonContractionError, StagnationError)
from .flowfields import (FlowState, density_from_bernoulli,
                         grid_sobolev_pair, grid_sobolev_proxy)
from .mixed import assemble_coefficients, mode_bvp_solve, solve_linear_mixed
from .xsection import SpectralField, VectorEigenBasis, dirichlet_basis


class BeltramiProblem:
    """Inputs for one aligned-vorticity solve."""

    def __init__(self, disc, bg, eps, h2=None, h3=None, phi0=None,
                 fp_tol=1e-9, max_iter=40, sigma_ladder=None, gate_rel=None,
                 n_aux_modes=60, compat_tol=1e-8, transport_substep=1):
        self.disc = disc
        self.bg = bg
        self.eps = float(eps)
        self.h2 = h2
        self.h3 = h3
        self.phi0 = phi0
        self.fp_tol = fp_tol
        self.max_iter = max_iter
        self.sigma_ladder = sigma_ladder
        self.gate_rel = gate_rel
        self.transport_substep = transport_substep
        self.delta1 = np.sqrt(self.eps) if self.eps > 0 else 0.0
        self.ball_scale = abs(disc.duct.x[0]) / 20.0
        self.q_basis = dirichlet_basis(disc.cs, n_aux_modes)
        self.e_basis = VectorEigenBasis(disc.cs, n_aux_modes)
        from .xsection import neumann_basis
        self.nb_aux = neumann_basis(disc.cs, n_aux_modes)
        if (h2 is None) != (h3 is None):
            raise CompatibilityError("give both tangential components or none")
        if h2 is not None:
            res = tangential_pair_compat(h2, h3)
            if res > compat_tol:
                raise CompatibilityError(
                    f"tangential entrance data violates the corner "
                    f"conditions: {res:.3e}")

    @property
    def subsonic_mask(self):
        """Quadrature mask of the refined-norm subregion x1 <= L0/3."""
        x = self.disc.duct.x
        return (x <= x[0] / 3.0 + 1e-14).astype(float)

    def entrance_curl(self):
        """Transverse curl of the tangential data (analytic grid field)."""
        cs = self.disc.cs
        if self.h2 is None:
            return np.zeros((cs.n2, cs.n3))
        return self.h3.grid((1, 0)) - self.h2.grid((0, 1))

    def phi_total(self):
        disc = self.disc
        nd = disc.i_exit + 1
        base = self.bg.Phi[:nd, None, None] * np.ones((nd, disc.cs.n2,
                                                       disc.cs.n3))
        if self.phi0 is not None:
            base = base + self.eps * self.phi0.value_grid(disc.duct.x,
                                                          disc.cs)
        return base


def _density(problem, v1, v2, v3):
    nd = problem.disc.i_exit + 1
    ub = problem.bg.sample("u")[:nd, None, None]
    speed2 = (ub + v1) ** 2 + v2 ** 2 + v3 ** 2
    return density_from_bernoulli(problem.bg.gas, speed2,
                                  problem.phi_total())


def kappa_boundary(problem, v1, v2, v3):
    """Entrance alignment factor: eps * (transverse curl of the data) over
    the entrance mass flux of the frozen state."""
    disc = problem.disc
    ub0 = problem.bg.sample("u")[0]
    axial = ub0 + v1[0]
    if np.min(axial) <= 0.0:
        raise StagnationError("axial speed lost positivity at the entrance")
    rho = _density(problem, v1, v2, v3)
    denom = rho[0] * axial
    return problem.eps * problem.entrance_curl() / denom


class _SliceInterp:
    """Bicubic (B-spline) evaluator for per-level cross-section slices."""

    def __init__(self, cs, field):
        self.cs = cs
        self._coef = ndimage.spline_filter(field, order=3, mode="nearest")
        self._d2 = cs.x2[1] - cs.x2[0]
        self._d3 = cs.x3[1] - cs.x3[0]

    def __call__(self, pts):
        c = np.vstack([pts[:, 0] / self._d2, pts[:, 1] / self._d3])
        return ndimage.map_coordinates(self._coef, c, order=3,
                                       prefilter=False, mode="nearest")


def _velocity_ratio_interps(problem, v1, v2, v3):
    """Bicubic interpolants of v'/(ub + v1) at every level and half-level."""
    disc = problem.disc
    cs = disc.cs
    nd = disc.i_exit + 1
    ub = problem.bg.sample("u")[:nd, None, None]
    axial = ub + v1
    if np.min(axial) <= 0.0:
        raise StagnationError("axial speed lost positivity in the duct")
    V2 = v2 / axial
    V3 = v3 / axial
    from .fdops import interpolation_matrix
    x = disc.duct.x
    half = 0.5 * (x[:-1] + x[1:])
    R = interpolation_matrix(x, half)
    V2h = (R @ V2.reshape(nd, -1)).reshape(nd - 1, cs.n2, cs.n3)
    V3h = (R @ V3.reshape(nd, -1)).reshape(nd - 1, cs.n2, cs.n3)
    full = [( _SliceInterp(cs, V2[i]), _SliceInterp(cs, V3[i]))
            for i in range(nd)]
    halfs = [(_SliceInterp(cs, V2h[i]), _SliceInterp(cs, V3h[i]))
             for i in range(nd - 1)]
    return full, halfs


def _rk4_step_back(pts, interp_hi, interp_half, interp_lo, h):
    def V(interp, p):
        return np.stack([interp[0](p), interp[1](p)], axis=1)

    k1 = V(interp_hi, pts)
    k2 = V(interp_half, pts - 0.5 * h * k1)
    k3 = V(interp_half, pts - 0.5 * h * k2)
    k4 = V(interp_lo, pts - h * k3)
    return pts - h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def solve_transport(problem, v1, v2, v3, kappa0):
    """Transport the entrance alignment factor along the frozen streamlines
    by backward characteristic tracing (RK4 per grid interval), evaluating
    the entrance field by bicubic interpolation at the feet."""
    disc = problem.disc
    cs = disc.cs
    nd = disc.i_exit + 1
    h = disc.duct.h
    if not np.any(kappa0):
        return np.zeros((nd, cs.n2, cs.n3))
    full, halfs = _velocity_ratio_interps(problem, v1, v2, v3)

    base = np.stack([cs.X2.ravel(), cs.X3.ravel()], axis=1)
    n_cross = base.shape[0]
    pts = np.tile(base, (nd, 1))
    level = np.repeat(np.arange(nd), n_cross)

    tol = 1e-6 * min(cs.a, cs.b)
    for k in range(nd - 1, 0, -1):
        active = level >= k
        if not np.any(active):
            continue
        moved = _rk4_step_back(pts[active], full[k], halfs[k - 1],
                               full[k - 1], h)
        if np.any(moved[:, 0] < -tol) or np.any(moved[:, 0] > cs.a + tol) \
                or np.any(moved[:, 1] < -tol) or np.any(moved[:, 1] > cs.b + tol):
            raise GeometryViolationError(
                "a characteristic left the duct wall beyond tolerance")
        moved[:, 0] = np.clip(moved[:, 0], 0.0, cs.a)
        moved[:, 1] = np.clip(moved[:, 1], 0.0, cs.b)
        pts[active] = moved

    entry = _SliceInterp(cs, kappa0)
    kappa = entry(pts).reshape(nd, cs.n2, cs.n3)
    # the entrance level keeps its exact values
    kappa[0] = kappa0
    return kappa


def streamline_kappa_variation(problem, v1, v2, v3, kappa, n_lines=50,
                               seed_margin=0.2):
    """Independent forward tracer: follow n_lines streamlines of the full
    frozen velocity from interior entrance seeds and report the maximum
    variation of the alignment factor along each."""
    disc = problem.disc
    cs = disc.cs
    nd = disc.i_exit + 1
    h = disc.duct.h
    full, halfs = _velocity_ratio_interps(problem, v1, v2, v3)
    kappa_interp = [_SliceInterp(cs, kappa[i]) for i in range(nd)]

    rng = np.random.default_rng(2024)
    lo2, hi2 = seed_margin * cs.a, (1.0 - seed_margin) * cs.a
    lo3, hi3 = seed_margin * cs.b, (1.0 - seed_margin) * cs.b
    pts = np.stack([rng.uniform(lo2, hi2, n_lines),
                    rng.uniform(lo3, hi3, n_lines)], axis=1)
    values = [kappa_interp[0](pts)]
    for k in range(0, nd - 1):
        # forward step is the time-reverse of the backward stencil
        pts = _rk4_step_back(pts, full[k], halfs[k], full[k + 1], -h)
        pts[:, 0] = np.clip(pts[:, 0], 0.0, cs.a)
        pts[:, 1] = np.clip(pts[:, 1], 0.0, cs.b)
        values.append(kappa_interp[k + 1](pts))
    values = np.array(values)
    return float(np.max(values.max(axis=0) - values.min(axis=0)))


def _cross_d(cs):
    from .fdops import derivative_matrix
    return (derivative_matrix(cs.x2, 1).toarray(),
            derivative_matrix(cs.x3, 1).toarray())


def _div3(grid, cs, f1, f2, f3):
    D2t, D3t = _cross_d(cs)
    flat = f1.reshape(f1.shape[0], -1)
    d1 = (grid.d(1) @ flat).reshape(f1.shape)
    d2 = np.einsum("ab,nbj->naj", D2t, f2)
    d3 = np.einsum("ab,njb->nja", D3t, f3)
    return d1 + d2 + d3


def solve_pi(problem, v1, v2, v3, kappa):
    """Auxiliary scalar whose Laplacian matches the divergence of the raw
    curl source; zero trace on the wall, zero slope at both ends."""
    disc = problem.disc
    cs = disc.cs
    grid = disc.duct
    nd = disc.i_exit + 1
    ub = problem.bg.sample("u")[:nd, None, None]
    rho = _density(problem, v1, v2, v3)
    S1 = kappa * rho * (ub + v1)
    S2 = kappa * rho * v2
    S3 = kappa * rho * v3
    rhs = _div3(grid, cs, S1, S2, S3)

    # end-circle compatibility: the axial derivative of the source must
    # vanish where the entrance/exit circles meet the wall (the alignment
    # factor vanishes identically in a wall margin, so this is structural)
    flat = rhs.reshape(nd, -1)
    drhs = (grid.d(1) @ flat).reshape(rhs.shape)
    ends = np.concatenate([cs.boundary_values(drhs[0]),
                           cs.boundary_values(drhs[-1])])
    if np.max(np.abs(ends)) > 1e-6 * max(1.0, float(np.max(np.abs(rhs)))):
        raise CompatibilityError(
            "auxiliary problem: source slope does not vanish on the "
            "entrance/exit wall circles")

    qb = problem.q_basis
    rhs_m = SpectralField.analyze(rhs, qb, grid).coeffs  # (P, nd)
    P = np.zeros_like(rhs_m)
    ops = (grid.d(1), grid.d(2))
    for m in range(qb.n_modes):
        P[m] = mode_bvp_solve(grid.x, 1.0, qb.eigenvalues[m], rhs_m[m],
                              ("neumann", 0.0), ("neumann", 0.0), ops=ops)
    pi_field = SpectralField(qb, grid, P)
    dP = (grid.d(1) @ P.T).T
    g1 = qb.synthesize_slice(dP.T)
    g2 = np.einsum("pij,np->nij", qb.d2, P.T)
    g3 = np.einsum("pij,np->nij", qb.d3, P.T)
    report = {
        "pi_l2": pi_field.norm_l2(),
        "pi_wall_max": float(np.max(np.abs(cs.boundary_values(
            pi_field.synthesize())))),
        "pi_end_slope_max": float(max(np.max(np.abs(g1[0])),
                                      np.max(np.abs(g1[-1])))),
    }
    return pi_field, (g1, g2, g3), report


class VectorPotentialSolution:
    def __init__(self, u1_modes, uT_modes, curl_fields, residuals):
        self.u1_modes = u1_modes
        self.uT_modes = uT_modes
        self.curl = curl_fields
        self.residuals = residuals


def vector_potential(problem, f1, f2, f3, div_tol=1e-6, compat_tol=1e-6):
    """Vector potential of a divergence-free field with vanishing tangential
    trace; returns its curl (the rotational part of the velocity split).

    The axial component expands in zero-trace scalar modes with zero-slope
    ends; the transverse pair expands in the vector eigenbasis with zero
    ends.  The curl is evaluated spectrally in the cross-section and by
    4th-order differences along the axis.
    """
    disc = problem.disc
    cs = disc.cs
    grid = disc.duct
    nd = disc.i_exit + 1
    scale = max(float(np.max(np.abs([np.max(np.abs(f1)), np.max(np.abs(f2)),
                                     np.max(np.abs(f3))]))), 1e-300)
    div = _div3(grid, cs, f1, f2, f3)
    div_max = float(np.max(np.abs(div)))
    if div_max > div_tol * scale:
        raise InvalidSourceError(
            f"source divergence {div_max:.3e} above tolerance")
    flat = f1.reshape(nd, -1)
    df1 = (grid.d(1) @ flat).reshape(f1.shape)
    end_rows = [cs.boundary_values(df1[0]), cs.boundary_values(df1[-1])]
    tang = [cs.normal_derivative(f3[0], -f2[0]),
            cs.normal_derivative(f3[-1], -f2[-1])]
    compat = float(max(np.max(np.abs(np.concatenate(end_rows))),
                       np.max(np.abs(np.concatenate(tang)))))
    if compat > compat_tol * scale:
        raise InvalidSourceError(
            f"end-circle compatibility residual {compat:.3e} above tolerance")

    qb = problem.q_basis
    eb = problem.e_basis
    f1_m = SpectralField.analyze(f1, qb, grid).coeffs
    fT = np.stack([f2, f3], axis=1)  # (nd, 2, n2, n3)
    h_m = SpectralField.analyze(fT, eb, grid).coeffs

    # potential solves Laplace(u) = -f: by curl curl = grad div - Laplace,
    # the curl of its curl then reproduces +f (up to the divergence part,
    # which vanishes through the boundary conditions)
    ops = (grid.d(1), grid.d(2))
    p = np.zeros_like(f1_m)
    for m in range(qb.n_modes):
        p[m] = mode_bvp_solve(grid.x, 1.0, qb.eigenvalues[m], -f1_m[m],
                              ("neumann", 0.0), ("neumann", 0.0), ops=ops)
    c = np.zeros_like(h_m)
    for m in range(eb.n_modes):
        c[m] = mode_bvp_solve(grid.x, 1.0, eb.eigenvalues[m], -h_m[m],
                              ("dirichlet", 0.0), ("dirichlet", 0.0), ops=ops)

    dc = (grid.d(1) @ c.T).T
    curl_e = eb.curl_values()
    v1 = np.einsum("mij,nm->nij", curl_e, c.T)
    v2 = np.einsum("mij,nm->nij", qb.d3, p.T) \
        - np.einsum("mij,nm->nij", eb.values[:, 1], dc.T)
    v3 = np.einsum("mij,nm->nij", eb.values[:, 0], dc.T) \
        - np.einsum("mij,nm->nij", qb.d2, p.T)

    # discrete identities: div(curl .) cancels exactly when the same axial
    # difference operator is used on both sides
    d1v1 = np.einsum("mij,nm->nij", curl_e, dc.T)
    divT = -np.einsum("mij,nm->nij", curl_e, dc.T)
    div_v = d1v1 + divT
    residuals = {
        "source_div": div_max,
        "end_compat": compat,
        "div_curl_identity": float(np.max(np.abs(div_v))),
        "wall_trace": float(np.max(np.abs(cs.normal_derivative(v2, v3)))),
    }
    return VectorPotentialSolution((p,), (c,), (v1, v2, v3), residuals)


def harmonic_axial_mode(lam, r, x, L0, L1):
    """Closed-form zero-flux-exit mode: value r at the entrance, zero slope
    at the exit; returns (s, s', s'')."""
    if lam == 0.0:
        s = np.full_like(x, r)
        return s, np.zeros_like(x), np.zeros_like(x)
    rt = np.sqrt(lam)
    den = 1.0 + np.exp(2.0 * rt * (L0 - L1))
    e1 = np.exp(-rt * (x - L0))
    e2 = np.exp(rt * (x + L0 - 2.0 * L1))
    s = r * (e1 + e2) / den
    s1 = r * rt * (-e1 + e2) / den
    return s, s1, lam * s


def solve_divcurl(problem, f1, f2, f3, g2, g3, div_tol=1e-6):
    """Rotational part from the vector potential plus a harmonic-potential
    part carrying the entrance tangential data; exit axial trace zero."""
    disc = problem.disc
    cs = disc.cs
    grid = disc.duct
    vp = vector_potential(problem, f1, f2, f3, div_tol=div_tol)
    t1, t2, t3 = vp.curl

    gt2 = g2 - t2[0]
    gt3 = g3 - t3[0]
    p, = vp.u1_modes
    c, = vp.uT_modes
    # entrance curl compatibility: the reduced data must be curl-free (this
    # is what the auxiliary-scalar construction guarantees); the floor is
    # the transverse-stencil truncation level
    D2t, D3t = _cross_d(cs)
    curl_gt = np.einsum("ab,bj->aj", D2t, gt3) \
        - np.einsum("ab,jb->ja", D3t, gt2)
    curl_res = float(np.max(np.abs(curl_gt)))

    nb = problem.nb_aux
    div_gt = np.einsum("ab,bj->aj", D2t, gt2) \
        + np.einsum("ab,jb->ja", D3t, gt3)
    # a single-valued stream potential needs zero net flux through the wall
    circulation = float(abs(np.sum(cs.weights * div_gt)))
    if circulation > 1e-8 * max(1.0, float(np.max(np.abs(gt2))) + 1e-300):
        raise DataInconsistencyError(
            f"entrance data carries net flux {circulation:.3e}")
    coeffs = nb.analyze_slice(div_gt)
    r = np.zeros(nb.n_modes)
    r[1:] = -coeffs[1:] / nb.eigenvalues[1:]
    h_grid = nb.synthesize_slice(r)
    grad_res = max(
        float(np.max(np.abs(np.einsum("mij,m->ij", nb.d2, r) - gt2))),
        float(np.max(np.abs(np.einsum("mij,m->ij", nb.d3, r) - gt3))))

    L0, L1 = grid.x[0], grid.x[-1]
    s = np.zeros((nb.n_modes, len(grid.x)))
    s1 = np.zeros_like(s)
    s2 = np.zeros_like(s)
    for m in range(nb.n_modes):
        s[m], s1[m], s2[m] = harmonic_axial_mode(nb.eigenvalues[m], r[m],
                                                 grid.x, L0, L1)
    phi1 = nb.synthesize_slice(s1.T)
    phi2 = np.einsum("mij,nm->nij", nb.d2, s.T)
    phi3 = np.einsum("mij,nm->nij", nb.d3, s.T)

    v1 = t1 + phi1
    v2 = t2 + phi2
    v3 = t3 + phi3
    residuals = dict(vp.residuals)
    residuals.update({
        "entrance_curl_mismatch": curl_res,
        "stream_gradient_mismatch": grad_res,
        "exit_axial_trace": float(np.max(np.abs(v1[-1]))),
        "entrance_tangential": float(max(np.max(np.abs(v2[0] - g2)),
                                         np.max(np.abs(v3[0] - g3)))),
    })
    parts = {"rot": (t1, t2, t3), "harmonic": (phi1, phi2, phi3),
             "modes": (p, c, s, s1, s2), "stream": h_grid}
    return (v1, v2, v3), parts, residuals


def _psi_gradient_fields(disc, sol_ext):
    """Velocity contribution of the scalar correction: gradient grids plus
    all nine first derivatives of that gradient (for residual assembly)."""
    nb = disc.basis
    nd = disc.i_exit + 1
    A0 = sol_ext.A0[:, :nd]
    A1 = sol_ext.A1[:, :nd]
    A2 = sol_ext.A2[:, :nd]
    g1 = nb.synthesize_slice(A1.T)
    g2 = np.einsum("pij,np->nij", nb.d2, A0.T)
    g3 = np.einsum("pij,np->nij", nb.d3, A0.T)
    der = {
        (1, 1): nb.synthesize_slice(A2.T),
        (1, 2): np.einsum("pij,np->nij", nb.d2, A1.T),
        (1, 3): np.einsum("pij,np->nij", nb.d3, A1.T),
        (2, 2): np.einsum("pij,np->nij", nb.d22, A0.T),
        (2, 3): np.einsum("pij,np->nij", nb.d23, A0.T),
        (3, 3): np.einsum("pij,np->nij", nb.d33, A0.T),
    }
    return (g1, g2, g3), der


def _vdot_derivatives(problem, parts):
    """All nine first derivatives of the divergence-free + harmonic part,
    from the mode representations (axial by 4th-order differences of the
    mode coefficients, transverse analytically)."""
    disc = problem.disc
    grid = disc.duct
    qb = problem.q_basis
    eb = problem.e_basis
    nb = problem.nb_aux
    p, c, s, s1, s2 = parts["modes"]
    dp = (grid.d(1) @ p.T).T
    dc = (grid.d(1) @ c.T).T
    d2c = (grid.d(1) @ dc.T).T
    curl_e = eb.curl_values()
    e2 = eb.values[:, 0]
    e3 = eb.values[:, 1]
    de2_2 = eb.grads[:, 0, 0]
    de2_3 = eb.grads[:, 0, 1]
    de3_2 = eb.grads[:, 1, 0]
    de3_3 = eb.grads[:, 1, 1]
    # transverse derivatives of the basis curls by 4th-order stencils (the
    # factors are trigonometric, so the stencil error is spectrally small)
    cs = disc.cs
    D2t, D3t = _cross_d(cs)
    dcurl_2 = np.einsum("ab,mbj->maj", D2t, curl_e)
    dcurl_3 = np.einsum("ab,mjb->mja", D3t, curl_e)

    def msum(mode_fields, coeff):
        return np.einsum("mij,nm->nij", mode_fields, coeff.T)

    out = {}
    # component 1 = sum c_m curl_m + phi' part
    out[(1, 1)] = msum(curl_e, dc) + nb.synthesize_slice(s2.T)
    out[(2, 1)] = msum(dcurl_2, c) + np.einsum("pij,np->nij", nb.d2, s1.T)
    out[(3, 1)] = msum(dcurl_3, c) + np.einsum("pij,np->nij", nb.d3, s1.T)
    # component 2 = sum p_m d3 q_m - (dc) e3 + d2 phi
    out[(1, 2)] = msum(qb.d3, dp) - msum(e3, d2c) \
        + np.einsum("pij,np->nij", nb.d2, s1.T)
    out[(2, 2)] = msum(qb.d23, p) - msum(de3_2, dc) \
        + np.einsum("pij,np->nij", nb.d22, s.T)
    out[(3, 2)] = msum(qb.d33, p) - msum(de3_3, dc) \
        + np.einsum("pij,np->nij", nb.d23, s.T)
    # component 3 = (dc) e2 - sum p_m d2 q_m + d3 phi
    out[(1, 3)] = msum(e2, d2c) - msum(qb.d2, dp) \
        + np.einsum("pij,np->nij", nb.d3, s1.T)
    out[(2, 3)] = msum(de2_2, dc) - msum(qb.d22, p) \
        + np.einsum("pij,np->nij", nb.d23, s.T)
    out[(3, 3)] = msum(de2_3, dc) - msum(qb.d23, p) \
        + np.einsum("pij,np->nij", nb.d33, s.T)
    return out


def _quadratic_source(problem, v1, v2, v3):
    """Background-shear quadratic terms plus force-perturbation forcing at
    the frozen velocity state."""
    disc = problem.disc
    bg = problem.bg
    eps = problem.eps
    nd = disc.i_exit + 1
    g = bg.gas.gamma
    c2 = bg.sample("c2")[:nd, None, None]
    ub = bg.sample("u")[:nd, None, None]
    ub1 = bg.sample("u", 1)[:nd, None, None]
    if problem.phi0 is not None:
        p0 = problem.phi0.value_grid(disc.duct.x, disc.cs)
        p0_1 = problem.phi0.d1_grid(disc.duct.x, disc.cs)
        p0_2 = problem.phi0.d2_grid(disc.duct.x, disc.cs)
        p0_3 = problem.phi0.d3_grid(disc.duct.x, disc.cs)
    else:
        shape = (nd, disc.cs.n2, disc.cs.n3)
        p0 = p0_1 = p0_2 = p0_3 = np.zeros(shape)
    return ub1 / c2 * (-(g - 1.0) * eps * p0
                       + (g + 1.0) / 2.0 * v1 ** 2
                       + (g - 1.0) / 2.0 * (v2 ** 2 + v3 ** 2)) \
        - eps / c2 * ((ub + v1) * p0_1 + v2 * p0_2 + v3 * p0_3)


def _deformation_operator(problem, coeffs, v1, derivs):
    """Sum of coefficient-weighted first derivatives plus the lower-order
    term: the left side of the quasilinear divergence balance."""
    nd = problem.disc.i_exit + 1
    kbar1 = problem.bg.sample("k1")[:nd, None, None]
    k = {"11": coeffs.duct_slice("a11"), "12": coeffs.duct_slice("a12"),
         "13": coeffs.duct_slice("a13"), "22": coeffs.duct_slice("a22"),
         "23": coeffs.duct_slice("a23"), "33": coeffs.duct_slice("a33")}
    return (k["11"] * derivs[(1, 1)]
            + k["12"] * (derivs[(1, 2)] + derivs[(2, 1)])
            + k["13"] * (derivs[(1, 3)] + derivs[(3, 1)])
            + k["22"] * derivs[(2, 2)]
            + k["23"] * (derivs[(2, 3)] + derivs[(3, 2)])
            + k["33"] * derivs[(3, 3)]
            + kbar1 * v1)


class BeltramiState:
    """Converged aligned-vorticity flow with the stage fields attached."""

    def __init__(self, problem, flow, kappa, pi_field, history, residuals):
        self.problem = problem
        self.flow = flow
        self.kappa = kappa
        self.pi_field = pi_field
        self.history = history
        self.residuals = residuals

    @property
    def contraction_ratios(self):
        d = self.history["diffs"]
        return [d[i + 1] / d[i] for i in range(len(d) - 1) if d[i] > 0]


def beltrami_fixed_point(problem):
    """Iterate the four-stage sweep from the resting perturbation."""
    disc = problem.disc
    bg = problem.bg
    cs = disc.cs
    grid = disc.duct
    eps = problem.eps
    nd = disc.i_exit + 1
    shape = (nd, cs.n2, cs.n3)

    v1 = np.zeros(shape)
    v2 = np.zeros(shape)
    v3 = np.zeros(shape)
    g2 = eps * (problem.h2.grid() if problem.h2 is not None else np.zeros(shape[1:]))
    g3 = eps * (problem.h3.grid() if problem.h3 is not None else np.zeros(shape[1:]))

    h = grid.h
    ladder = problem.sigma_ladder
    if ladder is None:
        from .mixed import default_sigma_ladder
        ladder = default_sigma_ladder(stop=0.5 * h * h, h=h)

    diffs = []
    ratios = []
    ball_norms = []
    history = {"diffs": diffs, "ratios": ratios, "ball_norms": ball_norms,
               "pi_l2": [], "transport_variation": []}
    kappa = np.zeros(shape)
    pi_field = None
    final = None

    for it in range(problem.max_iter):
        kappa0 = kappa_boundary(problem, v1, v2, v3)
        kappa = solve_transport(problem, v1, v2, v3, kappa0)
        pi_field, pi_grad, pi_report = solve_pi(problem, v1, v2, v3, kappa)
        history["pi_l2"].append(pi_report["pi_l2"])

        rho = _density(problem, v1, v2, v3)
        ub = bg.sample("u")[:nd, None, None]
        f1 = kappa * rho * (ub + v1) - pi_grad[0]
        f2 = kappa * rho * v2 - pi_grad[1]
        f3 = kappa * rho * v3 - pi_grad[2]
        vdot, parts, dc_res = solve_divcurl(problem, f1, f2, f3, g2, g3)

        coeffs = assemble_coefficients(disc, bg,
                                       state={"v1": v1, "v2": v2, "v3": v3},
                                       eps=eps, phi0=problem.phi0)
        vd_der = _vdot_derivatives(problem, parts)
        F = _quadratic_source(problem, v1, v2, v3) \
            - _deformation_operator(problem, coeffs, vdot[0], vd_der)

        psi, sol_ext, rep = solve_linear_mixed(
            coeffs, F, sigma_ladder=ladder, gate_rel=problem.gate_rel)
        (p1, p2, p3), psi_der = _psi_gradient_fields(disc, sol_ext)

        n1 = vdot[0] + p1
        n2 = vdot[1] + p2
        n3 = vdot[2] + p3

        d_full, d_sub = grid_sobolev_pair(
            (n1 - v1, n2 - v2, n3 - v3), grid, cs, 2, 3,
            problem.subsonic_mask, length_scale=problem.ball_scale)
        diff = d_full + d_sub
        diffs.append(diff)
        b_full, b_sub = grid_sobolev_pair(
            (n1, n2, n3), grid, cs, 3, 4, problem.subsonic_mask,
            length_scale=problem.ball_scale)
        ball = b_full + b_sub
        ball_norms.append(ball)
        if eps > 0.0 and ball > problem.delta1:
            raise BallEscapeError(
                f"iterate {it} left the sqrt(eps) ball: {ball:.3e} > "
                f"{problem.delta1:.3e}", norms=ball_norms)
        if len(diffs) >= 2 and diffs[-2] > 0:
            ratios.append(diffs[-1] / diffs[-2])
            if len(ratios) >= 2 and ratios[-1] > 1.0 and ratios[-2] > 1.0:
                raise NonContractionError(
                    f"ratios {ratios[-2]:.3f}, {ratios[-1]:.3f} exceed 1")

        v1, v2, v3 = n1, n2, n3
        if diff <= problem.fp_tol:
            final = (coeffs, vdot, parts, vd_der, sol_ext, dc_res)
            break
    else:
        raise NonContractionError(
            f"no convergence in {problem.max_iter} iterations "
            f"(last diff {diffs[-1]:.3e})")

    coeffs, vdot, parts, vd_der, sol_ext, dc_res = final
    history["transport_variation"].append(
        streamline_kappa_variation(problem, v1, v2, v3, kappa))

    residuals = _final_residuals(problem, coeffs, kappa, pi_field,
                                 (v1, v2, v3), vdot, parts, vd_der, sol_ext,
                                 dc_res)
    vort = _curl_fields(problem, parts)
    ub = bg.sample("u")[:nd, None, None]
    flow = FlowState(bg.gas, grid, cs, ub + v1, v2, v3,
                     problem.phi_total(), residuals=residuals, kappa=kappa,
                     pi_field=pi_field.synthesize() if pi_field is not None
                     else None, vorticity=vort)
    flow.extract_sonic_surface()
    return BeltramiState(problem, flow, kappa, pi_field, history, residuals)


def _curl_fields(problem, parts):
    """Vorticity grids of the converged velocity.

    The two gradient parts are curl-free in exact arithmetic, so the curl of
    the rotational part is the vorticity; it is evaluated with 4th-order
    transverse stencils and axial differences of the grid fields."""
    disc = problem.disc
    grid = disc.duct
    cs = disc.cs
    D2t, D3t = _cross_d(cs)
    t1, t2, t3 = parts["rot"]
    d1v3 = (grid.d(1) @ t3.reshape(t3.shape[0], -1)).reshape(t3.shape)
    d1v2 = (grid.d(1) @ t2.reshape(t2.shape[0], -1)).reshape(t2.shape)
    w1 = np.einsum("ab,nbj->naj", D2t, t3) \
        - np.einsum("ab,njb->nja", D3t, t2)
    w2 = np.einsum("ab,njb->nja", D3t, t1) - d1v3
    w3 = d1v2 - np.einsum("ab,nbj->naj", D2t, t1)
    return (w1, w2, w3)


def _final_residuals(problem, coeffs, kappa, pi_field, v, vdot, parts,
                     vd_der, sol_ext, dc_res):
    disc = problem.disc
    grid = disc.duct
    cs = disc.cs
    nd = disc.i_exit + 1
    v1, v2, v3 = v
    (p1, p2, p3), psi_der = _psi_gradient_fields(disc, sol_ext)
    derivs = {}
    # combine first-derivative grids of vdot and the correction gradient
    psi_map = {(1, 1): (1, 1), (1, 2): (1, 2), (2, 1): (1, 2),
               (1, 3): (1, 3), (3, 1): (1, 3), (2, 2): (2, 2),
               (2, 3): (2, 3), (3, 2): (2, 3), (3, 3): (3, 3)}
    for key, psi_key in psi_map.items():
        derivs[key] = vd_der[key] + psi_der[psi_key]

    defo = _deformation_operator(problem, coeffs, v1, derivs) \
        - _quadratic_source(problem, v1, v2, v3)
    rho = _density(problem, v1, v2, v3)
    gas = problem.bg.gas
    c2bar = problem.bg.sample("c2")[:nd, None, None]
    ub = problem.bg.sample("u")[:nd, None, None]
    speed2 = (ub + v1) ** 2 + v2 ** 2 + v3 ** 2
    c2 = (gas.gamma - 1.0) * (gas.B0 + problem.phi_total() - 0.5 * speed2)
    div_rho_u = rho * c2bar / c2 * defo

    # alignment: curl u - kappa rho u, with curl u from the rotational part
    w1, w2, w3 = _curl_fields(problem, parts)
    a1 = w1 - kappa * rho * (ub + v1)
    a2 = w2 - kappa * rho * v2
    a3 = w3 - kappa * rho * v3

    flat = kappa.reshape(nd, -1)
    dk1 = (grid.d(1) @ flat).reshape(kappa.shape)
    D2t, D3t = _cross_d(cs)
    dk2 = np.einsum("ab,nbj->naj", D2t, kappa)
    dk3 = np.einsum("ab,njb->nja", D3t, kappa)
    transp = (ub + v1) * dk1 + v2 * dk2 + v3 * dk3

    def l2(f):
        return float(np.sqrt(grid.integrate(cs.integrate(f ** 2))))

    out = dict(dc_res)
    out.update({
        "continuity_l2": l2(div_rho_u),
        "continuity_max": float(np.max(np.abs(div_rho_u))),
        "alignment_l2": float(np.sqrt(sum(l2(a) ** 2 for a in (a1, a2, a3)))),
        "alignment_max": float(max(np.max(np.abs(a)) for a in (a1, a2, a3))),
        "transport_l2": l2(transp),
        "transport_max": float(np.max(np.abs(transp))),
        "kappa_wall_max": float(np.max(np.abs(cs.boundary_values(kappa)))),
        "kappa_interior_max": float(np.max(np.abs(kappa))),
        "pi_l2": pi_field.norm_l2() if pi_field is not None else 0.0,
        "wall_normal_velocity": float(np.max(np.abs(
            cs.normal_derivative(v2, v3)))),
        "entrance_tangential": float(max(
            np.max(np.abs(v2[0] - problem.eps * (
                problem.h2.grid() if problem.h2 is not None else 0.0))),
            np.max(np.abs(v3[0] - problem.eps * (
                problem.h3.grid() if problem.h3 is not None else 0.0))))),
        "wall_normal_gradient_v1": float(np.max(np.abs(
            cs.normal_derivative(
                np.einsum("ab,nbj->naj", D2t, v1),
                np.einsum("ab,njb->nja", D3t, v1))))),
    })
    return out
