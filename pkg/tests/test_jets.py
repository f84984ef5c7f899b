import numpy as np
import pytest

from ductflow.jets import Jet, polyval_jet


def test_variable_and_constant():
    x = np.array([0.3, -1.2])
    j = Jet.variable(x, 4)
    assert np.allclose(j.value, x)
    assert np.allclose(j.derivative(1), 1.0)
    assert np.allclose(j.derivative(2), 0.0)


def test_product_rule_matches_closed_form():
    x = np.linspace(-1.0, 2.0, 7)
    j = Jet.variable(x, 5)
    f = j * j * j  # x^3
    assert np.allclose(f.derivative(0), x ** 3)
    assert np.allclose(f.derivative(1), 3 * x ** 2)
    assert np.allclose(f.derivative(2), 6 * x)
    assert np.allclose(f.derivative(3), 6.0)
    assert np.allclose(f.derivative(4), 0.0)


def test_quotient_and_power():
    x = np.array([0.5, 1.7, 3.0])
    j = Jet.variable(x, 4)
    inv = 1.0 / j
    assert np.allclose(inv.derivative(1), -1.0 / x ** 2)
    assert np.allclose(inv.derivative(2), 2.0 / x ** 3)
    p = j.power(-1.5)
    assert np.allclose(p.value, x ** -1.5)
    assert np.allclose(p.derivative(1), -1.5 * x ** -2.5)
    assert np.allclose(p.derivative(2), 1.5 * 2.5 * x ** -3.5)


def test_exp_log_roundtrip():
    x = np.array([0.2, 1.0, 2.5])
    j = Jet.variable(x, 6)
    e = j.exp()
    assert np.allclose(e.derivative(4), np.exp(x))
    back = e.log()
    assert np.allclose(back.value, x)
    assert np.allclose(back.derivative(1), 1.0, atol=1e-12)
    assert np.allclose(back.derivative(3), 0.0, atol=1e-10)


def test_trig_derivatives():
    x = np.linspace(0, 3, 11)
    j = Jet.variable(x, 5)
    s, c = j.sin_cos()
    assert np.allclose(s.derivative(1), np.cos(x))
    assert np.allclose(s.derivative(2), -np.sin(x))
    assert np.allclose(c.derivative(3), np.sin(x))


def test_composed_expression_against_finite_differences():
    def f(x):
        j = Jet.variable(np.asarray(x), 4)
        return (j * j + 1.0).sqrt() * (0.5 * j).exp()

    x0 = np.array([0.7])
    jet = f(x0)
    h = 1e-3
    stencil = np.array([-2, -1, 0, 1, 2]) * h
    vals = np.array([f(x0 + s).value[0] for s in stencil])
    d1 = (vals[0] - 8 * vals[1] + 8 * vals[3] - vals[4]) / (12 * h)
    d2 = (-vals[0] + 16 * vals[1] - 30 * vals[2] + 16 * vals[3] - vals[4]) / (12 * h ** 2)
    assert jet.derivative(1)[0] == pytest.approx(d1, abs=1e-9)
    assert jet.derivative(2)[0] == pytest.approx(d2, abs=1e-6)


def test_shift_is_derivative_jet():
    x = np.array([0.4, 1.1])
    j = (Jet.variable(x, 5) * 2.0).sin()
    ds = j.shift()
    assert np.allclose(ds.value, 2 * np.cos(2 * x))
    assert np.allclose(ds.derivative(1), -4 * np.sin(2 * x))


def test_polyval_jet():
    x = np.array([1.5])
    j = Jet.variable(x, 3)
    p = polyval_jet([1.0, -2.0, 3.0], j)  # 1 - 2u + 3u^2
    assert np.allclose(p.value, 1 - 2 * x + 3 * x ** 2)
    assert np.allclose(p.derivative(1), -2 + 6 * x)
    assert np.allclose(p.derivative(2), 6.0)
