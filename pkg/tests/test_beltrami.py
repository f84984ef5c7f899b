import numpy as np
import pytest

from ductflow.beltrami import (BeltramiProblem, beltrami_fixed_point,
                               harmonic_axial_mode, kappa_boundary, solve_pi,
                               solve_transport, streamline_kappa_variation,
                               vector_potential, solve_divcurl)
from ductflow.bgflow import GasConstants, make_admissible_force, solve_background
from ductflow.boundary import wallflat_sine_profile
from ductflow.errors import InvalidSourceError
from ductflow.mixed import DuctDiscretization
from ductflow.potential import PotentialProblem, fixed_point_solve
from ductflow.xsection import SpectralField, build_rectangle


@pytest.fixture(scope="module")
def setting():
    gas = GasConstants(2.0, 1.0, 0.5)
    force = make_admissible_force(gas, -1.0, 1.0)
    cs = build_rectangle(np.pi, np.pi, 21, 21)
    disc = DuctDiscretization(cs, -1.0, 1.0, 2.0, 210, 9)
    bg = solve_background(gas, force, disc.full.x).extend()
    return gas, cs, disc, bg


@pytest.fixture(scope="module")
def curl_problem(setting):
    gas, cs, disc, bg = setting
    h2 = wallflat_sine_profile(cs, [(1, 1, 0.0)])
    h3 = wallflat_sine_profile(cs, [(1, 1, 0.05)])
    return BeltramiProblem(disc, bg, eps=1e-3, h2=h2, h3=h3, n_aux_modes=30)


@pytest.fixture(scope="module")
def converged(curl_problem):
    return beltrami_fixed_point(curl_problem)


def test_entrance_factor_zero_and_closed_form(setting):
    gas, cs, disc, bg = setting
    nd = disc.i_exit + 1
    zeros = np.zeros((nd, cs.n2, cs.n3))
    # no tangential data: zero factor
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    k0 = kappa_boundary(prob, zeros, zeros, zeros)
    assert np.max(np.abs(k0)) == 0.0
    # at rest the denominator is the entrance mass flux rho0*u0 = 0.5
    prob3 = BeltramiProblem(disc, bg, eps=1e-3,
                            h2=wallflat_sine_profile(cs, [(1, 1, 0.0)]),
                            h3=wallflat_sine_profile(cs, [(1, 1, 0.05)]),
                            n_aux_modes=20)
    k3 = kappa_boundary(prob3, zeros, zeros, zeros)
    expected = 1e-3 * prob3.entrance_curl() / 0.5
    assert np.allclose(k3, expected, atol=1e-14)


def test_entrance_factor_zero_for_gradient_data(setting):
    # curl-free tangential data (a gradient pair) carries no vorticity
    gas, cs, disc, bg = setting
    nd = disc.i_exit + 1
    zeros = np.zeros((nd, cs.n2, cs.n3))
    g = wallflat_sine_profile(cs, [(1, 1, 0.3)])

    class GradProfile:
        def __init__(self, base, which):
            self.base = base
            self.which = which
            self.cs = base.cs

        def grid(self, deriv=(0, 0)):
            d2, d3 = deriv
            if self.which == 2:
                return self.base.grid((d2 + 1, d3))
            return self.base.grid((d2, d3 + 1))

    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    prob.h2 = GradProfile(g, 2)
    prob.h3 = GradProfile(g, 3)
    k0 = kappa_boundary(prob, zeros, zeros, zeros)
    assert np.max(np.abs(k0)) < 1e-14


def test_transport_straight_characteristics(setting):
    gas, cs, disc, bg = setting
    nd = disc.i_exit + 1
    zeros = np.zeros((nd, cs.n2, cs.n3))
    prob = BeltramiProblem(disc, bg, eps=1e-3,
                           h2=wallflat_sine_profile(cs, [(1, 1, 0.0)]),
                           h3=wallflat_sine_profile(cs, [(1, 1, 0.05)]),
                           n_aux_modes=20)
    k0 = kappa_boundary(prob, zeros, zeros, zeros)
    kappa = solve_transport(prob, zeros, zeros, zeros, k0)
    # zero transverse velocity: the factor is constant along the axis
    assert np.max(np.abs(kappa - k0[None])) < 1e-10
    assert np.max(np.abs(cs.boundary_values(kappa))) < 1e-15


def test_transport_wall_values_and_audit(curl_problem, converged):
    st = converged
    assert st.residuals["kappa_wall_max"] < 1e-12
    assert st.residuals["kappa_interior_max"] > 1e-6
    assert st.history["transport_variation"][-1] < 1e-6


def test_pi_zero_for_zero_factor(setting):
    gas, cs, disc, bg = setting
    nd = disc.i_exit + 1
    zeros = np.zeros((nd, cs.n2, cs.n3))
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    pi_field, grads, rep = solve_pi(prob, zeros, zeros, zeros, zeros)
    assert rep["pi_l2"] == 0.0
    assert np.max(np.abs(pi_field.coeffs)) == 0.0


def test_pi_manufactured(setting):
    """RHS built from an analytic field with zero end slopes and zero wall
    trace must be recovered at the discretization level."""
    gas, cs, disc, bg = setting
    from ductflow.mixed import mode_bvp_solve
    grid = disc.duct
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    qb = prob.q_basis
    L0, L1 = grid.x[0], grid.x[-1]
    ax = np.cos(np.pi * (grid.x - L0) / (L1 - L0))
    d2ax = -(np.pi / (L1 - L0)) ** 2 * ax
    target = np.einsum("i,jk->ijk", ax, qb.values[0])
    rhs = np.einsum("i,jk->ijk", d2ax - qb.eigenvalues[0] * ax, qb.values[0])
    rhs_m = SpectralField.analyze(rhs, qb, grid).coeffs
    sol = mode_bvp_solve(grid.x, 1.0, qb.eigenvalues[0], rhs_m[0],
                         ("neumann", 0.0), ("neumann", 0.0))
    err = np.max(np.abs(sol - ax))
    assert err < 1e-6


def test_vector_potential_zero():
    gas = GasConstants(2.0, 1.0, 0.5)
    force = make_admissible_force(gas, -1.0, 1.0)
    cs = build_rectangle(np.pi, np.pi, 17, 17)
    disc = DuctDiscretization(cs, -1.0, 1.0, 2.0, 120, 5)
    bg = solve_background(gas, force, disc.full.x).extend()
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=12)
    nd = disc.i_exit + 1
    z = np.zeros((nd, cs.n2, cs.n3))
    vp = vector_potential(prob, z, z, z)
    assert all(np.max(np.abs(c)) == 0.0 for c in vp.curl)


def test_vector_potential_manufactured(setting):
    """Pick a potential satisfying the split boundary conditions, apply the
    (negated) Laplacian analytically, and recover its curl."""
    gas, cs, disc, bg = setting
    grid = disc.duct
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=30)
    qb, eb = prob.q_basis, prob.e_basis
    L0, L1 = grid.x[0], grid.x[-1]
    # axial profiles: zero slope at ends for the axial part, zero value at
    # ends for the transverse part
    ax1 = np.cos(np.pi * (grid.x - L0) / (L1 - L0))
    d2ax1 = -(np.pi / (L1 - L0)) ** 2 * ax1
    axT = np.sin(np.pi * (grid.x - L0) / (L1 - L0))
    d2axT = -(np.pi / (L1 - L0)) ** 2 * axT
    m1, mT = 0, 1
    u1 = np.einsum("i,jk->ijk", ax1, qb.values[m1])
    f1 = -np.einsum("i,jk->ijk", d2ax1 - qb.eigenvalues[m1] * ax1,
                    qb.values[m1])
    fT = -np.einsum("i,cjk->icjk", d2axT - eb.eigenvalues[mT] * axT,
                    eb.values[mT])
    vp = vector_potential(prob, f1, fT[:, 0], fT[:, 1], div_tol=np.inf,
                          compat_tol=np.inf)
    # the curl of the reconstructed potential must match the analytic curl
    v1_exact = np.einsum("i,jk->ijk", axT, eb.curl_values()[mT])
    dax1 = -np.pi / (L1 - L0) * np.sin(np.pi * (grid.x - L0) / (L1 - L0))
    daxT = np.pi / (L1 - L0) * np.cos(np.pi * (grid.x - L0) / (L1 - L0))
    v2_exact = np.einsum("i,jk->ijk", ax1, qb.d3[m1]) \
        - np.einsum("i,jk->ijk", daxT, eb.values[mT, 1])
    v3_exact = np.einsum("i,jk->ijk", daxT, eb.values[mT, 0]) \
        - np.einsum("i,jk->ijk", ax1, qb.d2[m1])
    for got, want in zip(vp.curl, (v1_exact, v2_exact, v3_exact)):
        assert np.max(np.abs(got - want)) < 2e-5
    assert vp.residuals["div_curl_identity"] < 1e-12
    assert vp.residuals["wall_trace"] < 1e-12


def test_vector_potential_rejects_nondivergence_free(setting):
    gas, cs, disc, bg = setting
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    nd = disc.i_exit + 1
    f1 = np.einsum("i,jk->ijk", disc.duct.x, prob.q_basis.values[0])
    z = np.zeros_like(f1)
    with pytest.raises(InvalidSourceError):
        vector_potential(prob, f1, z, z)


def test_harmonic_mode_closed_form():
    # value 1 at the entrance, zero slope at the exit, exactly
    L0, L1 = -1.0, 1.0
    x = np.linspace(L0, L1, 101)
    s, s1, s2 = harmonic_axial_mode(1.0, 1.0, x, L0, L1)
    assert s[0] == pytest.approx(1.0, abs=1e-15)
    assert s1[-1] == pytest.approx(0.0, abs=1e-15)
    assert np.max(np.abs(s2 - s)) < 1e-12  # solves s'' = lam s exactly
    expected = (np.exp(-(x - L0)) + np.exp(x + L0 - 2 * L1)) \
        / (1.0 + np.exp(2 * (L0 - L1)))
    assert np.max(np.abs(s - expected)) < 1e-15


def test_divcurl_zero_data(setting):
    gas, cs, disc, bg = setting
    prob = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    nd = disc.i_exit + 1
    z = np.zeros((nd, cs.n2, cs.n3))
    zc = np.zeros((cs.n2, cs.n3))
    (v1, v2, v3), parts, res = solve_divcurl(prob, z, z, z, zc, zc)
    assert max(np.max(np.abs(v)) for v in (v1, v2, v3)) == 0.0


def test_degenerate_data_matches_irrotational(setting):
    """Zero tangential data collapses the pipeline onto the scalar path."""
    gas, cs, disc, bg = setting
    prob_b = BeltramiProblem(disc, bg, eps=1e-3, n_aux_modes=20)
    st = beltrami_fixed_point(prob_b)
    prob_p = PotentialProblem(disc, bg, eps=1e-3)
    sol_p = fixed_point_solve(prob_p)
    nd = disc.i_exit + 1
    ub = bg.sample("u")[:nd, None, None]
    du1 = st.flow.u1 - (ub + 0.0)
    assert np.max(np.abs(du1)) < 1e-10
    assert np.max(np.abs(st.flow.u2)) < 1e-10
    assert np.max(np.abs(sol_p.psi.coeffs)) < 1e-15
    assert st.residuals["kappa_interior_max"] == 0.0
    assert st.residuals["pi_l2"] == 0.0


def test_converged_residuals(curl_problem, converged):
    st = converged
    tol = 1e-5  # ten times the documented solver tolerance family
    assert st.residuals["continuity_max"] < tol
    assert st.residuals["alignment_max"] < tol
    assert st.residuals["transport_max"] < tol
    assert st.residuals["wall_normal_velocity"] < 1e-8
    assert st.residuals["wall_normal_gradient_v1"] < 1e-6
    assert st.residuals["exit_axial_trace"] < 1e-12
    assert st.flow.bernoulli_residual() < 1e-9
    for r in st.contraction_ratios:
        assert r <= 0.5
    assert max(st.history["ball_norms"]) <= curl_problem.delta1


def test_vorticity_nonzero_inside_zero_on_wall(converged):
    st = converged
    w1 = st.flow.vorticity[0]
    assert np.max(np.abs(w1)) > 1e-6
    assert st.residuals["kappa_wall_max"] < 1e-12


def test_sonic_surface_present(converged):
    st = converged
    assert st.flow.surface is not None
    assert st.flow.surface.residual < 1e-8
    assert 0.0 < st.flow.surface.sup < 1e-3
