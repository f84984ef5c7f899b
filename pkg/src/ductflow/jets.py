"""Truncated Taylor-series (jet) arithmetic.

A jet holds the Taylor coefficients f(x0), f'(x0), f''(x0)/2!, ... of a
function at one or many base points simultaneously (coefficients are stored
scaled by 1/k!, values vectorized over trailing axes).  All background-flow
quantities and smooth cutoffs expose their derivatives through jets, so no
finite differencing is ever needed for analytic fields.
"""

import numpy as np

from .errors import DimensionMismatchError


class Jet:
    """Taylor coefficients c[k] = f^(k)(x0)/k! up to a fixed order.

    ``coeffs`` has shape (order+1, ...) where the trailing axes hold a batch
    of base points. Arithmetic is closed over jets of equal order; scalars
    and plain arrays are promoted to constant jets.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs):
        self.coeffs = np.asarray(coeffs, dtype=float)
        if self.coeffs.ndim < 1:
            raise DimensionMismatchError("jet needs a leading order axis")

    # -- constructors -----------------------------------------------------

    @classmethod
    def variable(cls, x, order):
        """Jet of the identity function at base points x."""
        x = np.asarray(x, dtype=float)
        c = np.zeros((order + 1,) + x.shape)
        c[0] = x
        if order >= 1:
            c[1] = 1.0
        return cls(c)

    @classmethod
    def constant(cls, value, order, shape=()):
        c = np.zeros((order + 1,) + tuple(shape))
        c[0] = value
        return cls(c)

    # -- properties -------------------------------------------------------

    @property
    def order(self):
        return self.coeffs.shape[0] - 1

    @property
    def value(self):
        return self.coeffs[0]

    def derivative(self, k):
        """k-th derivative values (unscales the Taylor coefficient)."""
        if k > self.order:
            raise DimensionMismatchError(
                f"jet of order {self.order} has no derivative {k}")
        from math import factorial
        return self.coeffs[k] * factorial(k)

    def derivatives(self, upto=None):
        """Array[(k, ...)] of derivative values for k = 0..upto."""
        from math import factorial
        upto = self.order if upto is None else upto
        fact = np.array([factorial(k) for k in range(upto + 1)])
        shape = (upto + 1,) + (1,) * (self.coeffs.ndim - 1)
        return self.coeffs[: upto + 1] * fact.reshape(shape)

    def truncate(self, order):
        return Jet(self.coeffs[: order + 1].copy())

    def shift(self):
        """Jet of f' (one order lower)."""
        k = np.arange(1, self.order + 1)
        shape = (self.order,) + (1,) * (self.coeffs.ndim - 1)
        return Jet(self.coeffs[1:] * k.reshape(shape))

    # -- promotion helper -------------------------------------------------

    def _co(self, other):
        if isinstance(other, Jet):
            if other.order != self.order:
                raise DimensionMismatchError("jet order mismatch")
            return other.coeffs
        c = np.zeros_like(self.coeffs)
        c[0] = other
        return c

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return Jet(self.coeffs + self._co(other))

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs)

    def __sub__(self, other):
        return Jet(self.coeffs - self._co(other))

    def __rsub__(self, other):
        return Jet(self._co(other) - self.coeffs)

    def __mul__(self, other):
        b = self._co(other)
        a = self.coeffs
        n = self.order + 1
        out = np.zeros_like(a)
        for k in range(n):
            for i in range(k + 1):
                out[k] += a[i] * b[k - i]
        return Jet(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        b = self._co(other)
        a = self.coeffs
        n = self.order + 1
        out = np.zeros_like(a)
        out[0] = a[0] / b[0]
        for k in range(1, n):
            acc = a[k].copy() if isinstance(a[k], np.ndarray) else a[k]
            for i in range(k):
                acc = acc - out[i] * b[k - i]
            out[k] = acc / b[0]
        return Jet(out)

    def __rtruediv__(self, other):
        return Jet(self._co(other)) / self

    def power(self, p):
        """Real power a**p; requires a[0] > 0 elementwise."""
        a = self.coeffs
        n = self.order + 1
        out = np.zeros_like(a)
        out[0] = a[0] ** p
        for k in range(1, n):
            acc = np.zeros_like(out[0])
            for i in range(1, k + 1):
                acc = acc + ((p + 1) * i - k) * a[i] * out[k - i]
            out[k] = acc / (k * a[0])
        return Jet(out)

    def sqrt(self):
        return self.power(0.5)

    def exp(self):
        a = self.coeffs
        n = self.order + 1
        out = np.zeros_like(a)
        out[0] = np.exp(a[0])
        for k in range(1, n):
            acc = np.zeros_like(out[0])
            for i in range(1, k + 1):
                acc = acc + i * a[i] * out[k - i]
            out[k] = acc / k
        return Jet(out)

    def log(self):
        a = self.coeffs
        n = self.order + 1
        out = np.zeros_like(a)
        out[0] = np.log(a[0])
        for k in range(1, n):
            acc = a[k] * k
            for i in range(1, k):
                acc = acc - i * out[i] * a[k - i]
            out[k] = acc / (k * a[0])
        return Jet(out)

    def sin_cos(self):
        a = self.coeffs
        n = self.order + 1
        s = np.zeros_like(a)
        c = np.zeros_like(a)
        s[0] = np.sin(a[0])
        c[0] = np.cos(a[0])
        for k in range(1, n):
            sa = np.zeros_like(s[0])
            ca = np.zeros_like(c[0])
            for i in range(1, k + 1):
                sa = sa + i * a[i] * c[k - i]
                ca = ca - i * a[i] * s[k - i]
            s[k] = sa / k
            c[k] = ca / k
        return Jet(s), Jet(c)

    def sin(self):
        return self.sin_cos()[0]

    def cos(self):
        return self.sin_cos()[1]


def polyval_jet(poly_coeffs, jet):
    """Evaluate a polynomial sum_k poly_coeffs[k] * u**k on a jet (Horner)."""
    acc = Jet.constant(0.0, jet.order, jet.value.shape)
    for c in reversed(poly_coeffs):
        acc = acc * jet + c
    return acc
