import numpy as np
import pytest
import sympy as sm

from chvem.errors import ConfigError, ExpressionError
from chvem.expression import compile_expression


@pytest.mark.parametrize(
    "text, expected",
    [
        ("1 + 2 * 3", 7.0),
        ("(1 + 2) * 3", 9.0),
        ("-2^2", -4.0),
        ("2^3^2", 512.0),
        ("8 / 4 / 2", 1.0),
        ("1e-2 * 100", 1.0),
        (".5 + 0.25", 0.75),
        ("cos(pi)", -1.0),
        ("abs(-3) + sqrt(4)", 5.0),
        ("1 < 2", 1.0),
        ("2 <= 1", -1.0),
        ("+3 - -2", 5.0),
    ],
)
def test_constant_expressions(text, expected):
    assert float(compile_expression(text)(0.0, 0.0)) == pytest.approx(expected)


def test_coordinates_broadcast():
    expr = compile_expression("x + 10*y")
    values = expr(np.array([0.0, 1.0, 2.0]), np.array([1.0, 1.0, 0.0]))
    np.testing.assert_allclose(values, [10.0, 11.0, 2.0])


def test_two_phase_comparison():
    expr = compile_expression("0.95 * ((x - 0.5)^2 + (y - 0.5)^2 < 0.04)")
    assert not expr.smooth
    np.testing.assert_allclose(expr(np.array([0.5, 0.0]), np.array([0.5, 0.0])), [0.95, -0.95])


def test_smoothness_flag():
    assert compile_expression("0.1 * cos(2*pi*x) * cos(2*pi*y)").smooth
    assert not compile_expression("abs(x - 0.5)").smooth


def test_gradient_is_exact_derivative():
    expr = compile_expression("sin(x) * y^2")
    x, y = np.array([0.3, 0.9]), np.array([0.7, 0.2])
    dx, dy = expr.gradient(x, y)
    np.testing.assert_allclose(dx, np.cos(x) * y**2, rtol=1e-14)
    np.testing.assert_allclose(dy, np.sin(x) * 2 * y, rtol=1e-14)


def test_gradient_of_non_smooth_expression_is_zero():
    dx, dy = compile_expression("0.95 * (x < 0.5)").gradient(np.array([0.2, 0.8]), np.array([0.0, 0.0]))
    np.testing.assert_array_equal(dx, 0.0)
    np.testing.assert_array_equal(dy, 0.0)


@pytest.mark.parametrize("text", ["", "   ", "1 +", "foo(x)", "z", "(x", "x $ 2", "2 3", "cos x", "open(x)"])
def test_invalid_expressions(text):
    with pytest.raises(ExpressionError):
        compile_expression(text)


def test_expression_errors_are_config_errors():
    assert issubclass(ExpressionError, ConfigError)


def test_non_finite_values_rejected():
    expr = compile_expression("1 / x")
    with pytest.raises(ExpressionError):
        expr(np.array([0.0, 1.0]), np.array([0.0, 0.0]))
    with pytest.raises(ExpressionError):
        compile_expression("sqrt(x)")(np.array([-1.0]), np.array([0.0]))


def test_comparison_becomes_piecewise():
    expr = compile_expression("x >= 0.5")
    assert expr.expr.has(sm.Piecewise)
    np.testing.assert_allclose(expr(np.array([0.5, 0.4]), np.array([0.0, 0.0])), [1.0, -1.0])
