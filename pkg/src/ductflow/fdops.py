"""Finite-difference operators and axial-grid utilities.

Derivative matrices are generated from arbitrary-order interpolation
weights (Fornberg's recursion), giving centered interior stencils and
one-sided closures of the same formal order near interval ends.
"""

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatchError, GridIncompatibilityError


def fd_weights(m, x0, xs):
    """Weights of the m-th derivative at x0 from nodes xs (Fornberg)."""
    xs = np.asarray(xs, dtype=float)
    n = len(xs)
    if m >= n:
        raise DimensionMismatchError("need more than m nodes for D^m")
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def _window(i, n, width):
    lo = max(0, min(i - width // 2, n - width))
    return lo, lo + width


def derivative_matrix(x, m, width=None):
    """Sparse m-th derivative matrix on nodes x, 4th-order accurate.

    Interior rows use (nearly) centered windows; rows near the ends fall
    back to shifted windows of the same width.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    if width is None:
        width = m + 4  # 4th order even for fully one-sided windows
    if width > n:
        raise DimensionMismatchError("grid too short for stencil width")
    rows, cols, vals = [], [], []
    for i in range(n):
        lo, hi = _window(i, n, width)
        w = fd_weights(m, x[i], x[lo:hi])
        rows.extend([i] * (hi - lo))
        cols.extend(range(lo, hi))
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def boundary_derivative_row(x, m, at_start, width=None):
    """One-sided m-th derivative weights at the first/last node."""
    x = np.asarray(x, dtype=float)
    if width is None:
        width = {1: 5, 2: 6, 3: 7}[m]
    if at_start:
        return np.arange(width), fd_weights(m, x[0], x[:width])
    n = len(x)
    return np.arange(n - width, n), fd_weights(m, x[-1], x[-width:])


def interpolation_matrix(x, targets, width=6):
    """Sparse matrix mapping samples on x to values at target points.

    Local Lagrange interpolation of `width` nearest nodes (O(h^width) for
    smooth data); targets that coincide with nodes get exact unit rows.
    """
    x = np.asarray(x, dtype=float)
    targets = np.atleast_1d(np.asarray(targets, dtype=float))
    n = len(x)
    h = x[1] - x[0]
    rows, cols, vals = [], [], []
    for r, t in enumerate(targets):
        if t < x[0] - 1e-9 * h or t > x[-1] + 1e-9 * h:
            raise GridIncompatibilityError(
                f"interpolation target {t} outside grid [{x[0]}, {x[-1]}]")
        j = int(round((t - x[0]) / h))
        j = min(max(j, 0), n - 1)
        if abs(t - x[j]) <= 1e-12 * max(1.0, abs(t)):
            rows.append(r)
            cols.append(j)
            vals.append(1.0)
            continue
        lo, hi = _window(j, n, width)
        w = fd_weights(0, t, x[lo:hi])
        rows.extend([r] * (hi - lo))
        cols.extend(range(lo, hi))
        vals.extend(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(targets), n))


def quadrature_weights(x):
    """Composite Simpson weights (even panel count) else trapezoid."""
    x = np.asarray(x, dtype=float)
    n = len(x) - 1
    h = x[1] - x[0]
    w = np.zeros(len(x))
    if n % 2 == 0 and n >= 2:
        w[0] = w[-1] = h / 3.0
        w[1:-1:2] = 4.0 * h / 3.0
        w[2:-1:2] = 2.0 * h / 3.0
    else:
        w[:] = h
        w[0] = w[-1] = h / 2.0
    return w


class AxialGrid:
    """Uniform axial grid with cached derivative/quadrature operators."""

    def __init__(self, x_lo, x_hi, n_intervals):
        if n_intervals < 8:
            raise GridIncompatibilityError("need at least 8 axial intervals")
        self.x = np.linspace(x_lo, x_hi, n_intervals + 1)
        self.h = (x_hi - x_lo) / n_intervals
        self.n = n_intervals
        self._d = {}
        self._quad = None

    def d(self, m):
        if m not in self._d:
            self._d[m] = derivative_matrix(self.x, m)
        return self._d[m]

    @property
    def quad_w(self):
        if self._quad is None:
            self._quad = quadrature_weights(self.x)
        return self._quad

    def index_of(self, value, tol=1e-9):
        i = int(round((value - self.x[0]) / self.h))
        if i < 0 or i > self.n or abs(self.x[i] - value) > tol * max(1.0, abs(value)):
            raise GridIncompatibilityError(
                f"{value} is not a node of the axial grid (h={self.h})")
        return i

    def subgrid(self, i_hi):
        """New AxialGrid over nodes [0..i_hi] (same spacing)."""
        return AxialGrid(self.x[0], self.x[i_hi], i_hi)

    def integrate(self, values, axis=0):
        values = np.asarray(values)
        w = self.quad_w
        shape = [1] * values.ndim
        shape[axis] = len(w)
        return np.sum(values * w.reshape(shape), axis=axis)
