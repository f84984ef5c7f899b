import math

import numpy as np
import pytest

from ductflow.errors import GridIncompatibilityError
from ductflow.fdops import (AxialGrid, boundary_derivative_row, derivative_matrix,
                            fd_weights, interpolation_matrix, quadrature_weights)


def test_fd_weights_centered_first_derivative():
    xs = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    w = fd_weights(1, 0.0, xs)
    assert np.allclose(w, [1 / 12, -8 / 12, 0.0, 8 / 12, -1 / 12])


def test_fd_weights_reproduce_polynomials():
    xs = np.linspace(0, 1, 7)
    for m in (1, 2, 3):
        w = fd_weights(m, 0.37, xs)
        for p in range(len(xs)):
            exact = 0.0
            if p >= m:
                exact = math.factorial(p) / math.factorial(p - m) * 0.37 ** (p - m)
            assert np.dot(w, xs ** p) == pytest.approx(exact, abs=1e-8)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_derivative_matrix_fourth_order(m):
    errs = []
    for n in (40, 80):
        x = np.linspace(0, 2, n + 1)
        D = derivative_matrix(x, m)
        f = np.sin(1.7 * x)
        d_exact = 1.7 ** m * np.sin(1.7 * x + m * np.pi / 2)
        errs.append(np.max(np.abs(D @ f - d_exact)))
    order = np.log2(errs[0] / errs[1])
    assert order > 3.5


def test_boundary_derivative_row():
    x = np.linspace(0, 1, 41)
    idx, w = boundary_derivative_row(x, 1, at_start=True)
    f = np.exp(x)
    assert np.dot(w, f[idx]) == pytest.approx(1.0, abs=1e-6)
    idx, w = boundary_derivative_row(x, 2, at_start=False)
    assert np.dot(w, f[idx]) == pytest.approx(np.e, abs=1e-4)


def test_interpolation_matrix_exact_on_nodes_and_accurate():
    x = np.linspace(-1, 1, 101)
    targets = np.array([-1.0, -0.503, 0.0, 0.7317, 1.0])
    R = interpolation_matrix(x, targets)
    f = np.cos(2.3 * x)
    vals = R @ f
    assert vals[0] == pytest.approx(np.cos(-2.3), abs=0)
    assert np.allclose(vals, np.cos(2.3 * targets), atol=1e-9)


def test_interpolation_matrix_rejects_outside_targets():
    x = np.linspace(0, 1, 21)
    with pytest.raises(GridIncompatibilityError):
        interpolation_matrix(x, [1.5])


def test_quadrature_simpson_accuracy():
    x = np.linspace(0, np.pi, 201)
    w = quadrature_weights(x)
    assert np.dot(w, np.sin(x)) == pytest.approx(2.0, abs=1e-9)


def test_axial_grid_helpers():
    g = AxialGrid(-1.0, 2.0, 60)
    assert g.index_of(0.5) == 30
    with pytest.raises(GridIncompatibilityError):
        g.index_of(0.5123)
    sub = g.subgrid(g.index_of(1.0))
    assert sub.x[-1] == pytest.approx(1.0)
    assert sub.h == pytest.approx(g.h)
    vals = np.cos(g.x)
    assert g.integrate(vals) == pytest.approx(np.sin(2.0) + np.sin(1.0), abs=1e-6)
