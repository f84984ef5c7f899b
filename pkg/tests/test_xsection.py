import numpy as np
import pytest

from ductflow.cutoffs import PlateauWindow
from ductflow.errors import InvalidGeometryError
from ductflow.fdops import AxialGrid
from ductflow.xsection import (SpectralField, build_rectangle, dirichlet_basis,
                               neumann_basis, VectorEigenBasis)


def brute_scalar_spectrum(a, b, count, start):
    """Independent oracle: enumerate (m pi/a)^2 + (n pi/b)^2 and sort."""
    vals = []
    for m in range(start, 40):
        for n in range(start, 40):
            vals.append((m * np.pi / a) ** 2 + (n * np.pi / b) ** 2)
    return sorted(vals)[:count]


def test_rectangle_area_quadrature_exact():
    cs = build_rectangle(np.pi, np.pi, 32, 32)
    assert cs.integrate(np.ones((32, 32))) == pytest.approx(np.pi ** 2, abs=1e-12)
    assert np.all(cs.weights > 0)


def test_rectangle_edge_normals():
    cs = build_rectangle(1.0, 2.0, 16, 16)
    normals = {name: nvec for name, _, nvec in cs.edges}
    assert normals["x2=0"] == (-1.0, 0.0)
    assert normals["x2=a"] == (1.0, 0.0)
    for nvec in normals.values():
        assert np.hypot(*nvec) == pytest.approx(1.0)


def test_rectangle_rejects_bad_dimensions():
    with pytest.raises(InvalidGeometryError):
        build_rectangle(-1.0, 1.0, 8, 8)
    with pytest.raises(InvalidGeometryError):
        build_rectangle(1.0, 1.0, 2, 8)


def test_orthonormality_residual_improves_with_resolution():
    # enough modes that the coarse grid aliases some products
    res = []
    for n in (8, 64):
        cs = build_rectangle(np.pi, np.pi, n, n)
        basis = neumann_basis(cs, 60)
        g = basis.gram()
        res.append(np.max(np.abs(g - np.eye(60))))
    assert res[1] < res[0]
    assert res[1] < 1e-10


def test_neumann_spectrum_unit_pi_square():
    cs = build_rectangle(np.pi, np.pi, 24, 24)
    basis = neumann_basis(cs, 4)
    assert np.allclose(basis.eigenvalues, [0.0, 1.0, 1.0, 2.0], atol=1e-13)
    # constant mode normalization 1/sqrt(area)
    assert np.allclose(basis.values[0], 1.0 / np.pi, atol=1e-14)


def test_neumann_first_eigenvalue_wide_rectangle():
    cs = build_rectangle(1.0, 2.0, 16, 16)
    basis = neumann_basis(cs, 3)
    oracle = brute_scalar_spectrum(1.0, 2.0, 3, start=0)
    assert np.allclose(basis.eigenvalues, oracle, atol=1e-12)
    assert basis.eigenvalues[1] == pytest.approx((np.pi / 2) ** 2)


def test_neumann_boundary_residual():
    cs = build_rectangle(np.pi, 1.5, 20, 20)
    basis = neumann_basis(cs, 12)
    assert basis.boundary_residual() < 1e-10


def test_dirichlet_spectrum_and_trace():
    cs = build_rectangle(np.pi, np.pi, 20, 20)
    basis = dirichlet_basis(cs, 1)
    assert basis.eigenvalues[0] == pytest.approx(2.0)
    assert basis.boundary_residual() < 1e-12

    cs1 = build_rectangle(1.0, 1.0, 20, 20)
    b5 = dirichlet_basis(cs1, 5)
    pp = np.pi ** 2
    assert np.allclose(b5.eigenvalues, [2 * pp, 5 * pp, 5 * pp, 8 * pp, 10 * pp])
    oracle = brute_scalar_spectrum(1.0, 1.0, 5, start=1)
    assert np.allclose(b5.eigenvalues, oracle)


def test_scalar_gram_identity():
    cs = build_rectangle(np.pi, np.pi, 40, 40)
    for make in (neumann_basis, dirichlet_basis):
        basis = make(cs, 20)
        assert np.max(np.abs(basis.gram() - np.eye(20))) < 1e-10


def test_vector_basis_eigenvalues_and_boundary():
    cs = build_rectangle(np.pi, np.pi, 24, 24)
    vb = VectorEigenBasis(cs, 12)
    assert np.all(vb.eigenvalues > 0)
    assert np.all(np.diff(vb.eigenvalues) >= -1e-14)
    # (m, n) = (1, 1) pair has eigenvalue 2 on the unit-pi square
    assert 2.0 in np.round(vb.eigenvalues, 12)
    assert vb.boundary_residual() < 1e-12


def test_vector_basis_edge_mode_closed_form():
    cs = build_rectangle(np.pi, np.pi, 24, 24)
    vb = VectorEigenBasis(cs, 4)
    # the (0, 1) family-0 mode is (sin x3, 0) normalized, eigenvalue 1
    idx = vb.families.index((0, 1, 0))
    assert vb.eigenvalues[idx] == pytest.approx(1.0)
    norm = np.sqrt(2.0 / np.pi ** 2)
    expected = norm * np.sin(cs.X3)
    assert np.allclose(vb.values[idx, 0], expected, atol=1e-13)
    assert np.allclose(vb.values[idx, 1], 0.0)


def test_vector_basis_gram_identity():
    cs = build_rectangle(np.pi, np.pi, 40, 40)
    vb = VectorEigenBasis(cs, 20)
    assert np.max(np.abs(vb.gram() - np.eye(20))) < 1e-10


def test_analyze_synthesize_roundtrip_single_mode():
    cs = build_rectangle(np.pi, np.pi, 24, 24)
    basis = neumann_basis(cs, 8)
    grid = AxialGrid(-1.0, 1.0, 16)
    field = np.broadcast_to(basis.values[3], (17, 24, 24)).copy()
    sf = SpectralField.analyze(field, basis, grid)
    expect = np.zeros((8, 17))
    expect[3] = 1.0
    assert np.allclose(sf.coeffs, expect, atol=1e-12)
    assert np.allclose(sf.synthesize(), field, atol=1e-12)


def test_analyze_zero_field():
    cs = build_rectangle(np.pi, np.pi, 16, 16)
    basis = neumann_basis(cs, 5)
    grid = AxialGrid(0.0, 1.0, 8)
    sf = SpectralField.analyze(np.zeros((9, 16, 16)), basis, grid)
    assert np.all(sf.coeffs == 0.0)


def test_smooth_interior_field_tail_superalgebraic():
    # interior Gaussian: all wall derivatives negligible, so the cosine
    # coefficients must fall faster than any fixed power; check that the
    # tail ratio accelerates and beats a cubic power-law reference
    cs = build_rectangle(np.pi, np.pi, 64, 64)
    c0 = np.pi / 2
    field = np.exp(-((cs.X2 - c0) ** 2 + (cs.X3 - c0) ** 2) / 0.38 ** 2)
    tails = {}
    for count in (80, 160, 320):
        basis = neumann_basis(cs, count)
        c = basis.analyze_slice(field)
        tails[count] = np.linalg.norm(c[count // 2:])
    r1 = tails[160] / tails[80]
    r2 = tails[320] / tails[160]
    assert r2 < r1          # decay rate accelerates
    assert r2 < 0.5 ** 3    # and beats the fixed cubic reference


def test_parseval_identity():
    cs = build_rectangle(np.pi, np.pi, 48, 48)
    basis = neumann_basis(cs, 25)
    grid = AxialGrid(-1.0, 2.0, 24)
    rng = np.random.default_rng(7)
    coeffs = rng.standard_normal((25, 25))
    sf = SpectralField(basis, grid, coeffs)
    vals = sf.synthesize()
    per_slice = cs.integrate(vals ** 2)
    direct = np.sqrt(np.sum(grid.quad_w * per_slice))
    assert direct == pytest.approx(sf.norm_l2(), abs=1e-10)


def test_vector_roundtrip():
    cs = build_rectangle(np.pi, np.pi, 32, 32)
    vb = VectorEigenBasis(cs, 10)
    grid = AxialGrid(0.0, 1.0, 10)
    rng = np.random.default_rng(3)
    coeffs = rng.standard_normal((10, 11))
    sf = SpectralField(vb, grid, coeffs)
    back = SpectralField.analyze(sf.synthesize(), vb, grid)
    assert np.allclose(back.coeffs, coeffs, atol=1e-11)
