import numpy as np
import pytest

from ductflow.boundary import (ForcePerturbation, cosine_mode_profile,
                               plateau_profile, scalar_entrance_compat,
                               tangential_pair_compat, wallflat_sine_profile)
from ductflow.xsection import build_rectangle


@pytest.fixture(scope="module")
def cs():
    return build_rectangle(np.pi, np.pi, 25, 25)


def test_wallflat_scalar_compat(cs):
    h0 = wallflat_sine_profile(cs, [(1, 1, 0.7), (2, 1, -0.3)])
    assert scalar_entrance_compat(h0) < 1e-13


def test_wallflat_pair_compat(cs):
    h2 = wallflat_sine_profile(cs, [(1, 2, 0.4)])
    h3 = wallflat_sine_profile(cs, [(1, 1, 1.0)])
    assert tangential_pair_compat(h2, h3) < 1e-13


def test_plateau_scalar_compat(cs):
    h0 = plateau_profile(cs, amplitude=0.5)
    assert scalar_entrance_compat(h0) == 0.0


def test_anchor_zero(cs):
    h0 = wallflat_sine_profile(cs, [(1, 1, 1.0)], anchor_zero=True)
    mid = h0.value(np.array([np.pi / 2]), np.array([np.pi / 2]))
    assert abs(mid[0]) < 1e-14


def test_profile_derivatives_match_fd(cs):
    h0 = wallflat_sine_profile(cs, [(1, 1, 1.0), (2, 2, 0.2)])
    x2, x3 = np.array([1.1]), np.array([0.7])
    d = 1e-5
    fd2 = (h0.value(x2 + d, x3) - h0.value(x2 - d, x3)) / (2 * d)
    assert h0.derivative(x2, x3, 1, 0)[0, 0] == pytest.approx(fd2[0, 0],
                                                              rel=1e-8)
    fd23 = (h0.value(x2 + d, x3 + d) - h0.value(x2 + d, x3 - d)
            - h0.value(x2 - d, x3 + d) + h0.value(x2 - d, x3 - d)) / (4 * d * d)
    assert h0.derivative(x2, x3, 1, 1)[0, 0] == pytest.approx(fd23[0, 0],
                                                              rel=1e-6)


def test_wallflat_is_finite_sine_combination(cs):
    # sin^3(t) = (3 sin t - sin 3t)/4, so the profile projects exactly onto
    # finitely many zero-trace modes
    from ductflow.xsection import dirichlet_basis
    h0 = wallflat_sine_profile(cs, [(1, 1, 1.0)])
    basis = dirichlet_basis(cs, 40)
    c = basis.analyze_slice(h0.grid())
    back = basis.synthesize_slice(c)
    assert np.max(np.abs(back - h0.grid())) < 1e-12
    assert np.sum(np.abs(c) > 1e-13) == 4  # (1,1), (1,3), (3,1), (3,3)


def test_force_perturbation_wall_flux_and_derivative(cs):
    phi0 = ForcePerturbation.gaussian_times_modes(cs, center=-0.3, width=0.5,
                                                  terms=[(1, 0, 0.4)])
    x = np.linspace(-1.0, 1.0, 401)
    assert phi0.wall_flux_residual(x, cs) < 1e-14
    v = phi0.value_grid(x, cs)
    d1 = phi0.d1_grid(x, cs)
    h = x[1] - x[0]
    fd = np.gradient(v, h, axis=0, edge_order=2)
    assert np.max(np.abs(fd - d1)) < 5e-5


def test_cosine_profile_wall_flux(cs):
    w = cosine_mode_profile(cs, [(1, 2, 1.0), (0, 1, 0.5)])
    d2 = w.grid((1, 0))
    d3 = w.grid((0, 1))
    assert np.max(np.abs(cs.normal_derivative(d2, d3))) < 1e-13
