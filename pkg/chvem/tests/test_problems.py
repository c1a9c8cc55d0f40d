import numpy as np
import pytest

from chvem.assembly import build_system
from chvem.errors import ConfigError, NoInterfaceError
from chvem.mesh import generate_quad_mesh
from chvem.problems import (
    ConstantCase,
    InitialDatum,
    InitialKind,
    ManufacturedCase,
    compute_errors,
    cross_indicator,
    ellipse_indicator,
    exact_case,
    forcing,
    interface_circularity,
    interpolate_initial,
    level_set_circularity,
    phi,
)

from .conftest import p2_dofs


def five_point(func, x, h):
    return (-func(x + 2 * h) + 8 * func(x + h) - 8 * func(x - h) + func(x - 2 * h)) / (12 * h)


def five_point_second(func, x, h):
    return (-func(x + 2 * h) + 16 * func(x + h) - 30 * func(x) + 16 * func(x - h) - func(x - 2 * h)) / (12 * h * h)


def laplacian_fd(func, x, y, h=1e-3):
    return five_point_second(lambda s: func(s, y), x, h) + five_point_second(lambda s: func(x, s), y, h)


def test_forcing_at_initial_time():
    x, y = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 5))
    np.testing.assert_allclose(forcing(x, y, 0.0, 0.1), np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y), atol=1e-14)


@pytest.mark.parametrize("point", [(0.1, 0.2, 0.3), (0.37, 0.81, 0.05), (0.6, 0.45, 1.0)])
def test_forcing_matches_finite_differences(point):
    x, y, t = point
    gamma = 0.1
    case = ManufacturedCase(gamma=gamma)
    u_t = five_point(lambda s: case.value(x, y, s), t, 1e-4)
    lap_phi = laplacian_fd(lambda px, py: phi(case.value(px, py, t)), x, y)
    bilap = laplacian_fd(lambda px, py: case.laplacian(px, py, t), x, y)
    expected = u_t - lap_phi + gamma**2 * bilap
    assert forcing(x, y, t, gamma) == pytest.approx(expected, rel=1e-5, abs=1e-5)
    assert case.forcing(x, y, t) == forcing(x, y, t, gamma)


def test_manufactured_derivatives():
    case = ManufacturedCase(gamma=0.1)
    x, y, t = 0.23, 0.71, 0.4
    ux, uy = case.gradient(x, y, t)
    assert ux == pytest.approx(five_point(lambda s: case.value(s, y, t), x, 1e-4), rel=1e-8)
    assert uy == pytest.approx(five_point(lambda s: case.value(x, s, t), y, 1e-4), rel=1e-8)
    uxx, uxy, uyy = case.hessian(x, y, t)
    assert uxy == pytest.approx(five_point(lambda s: case.gradient(x, s, t)[0], y, 1e-4), rel=1e-8)
    assert uxx + uyy == pytest.approx(case.laplacian(x, y, t))
    # homogeneous Neumann data on the unit square
    for bx in (0.0, 1.0):
        assert case.gradient(bx, 0.3, t)[0] == pytest.approx(0.0, abs=1e-14)


def test_exact_case_lookup():
    assert isinstance(exact_case("manufactured", 0.1), ManufacturedCase)
    assert exact_case("constant", 0.1, constant=0.2).constant == 0.2
    with pytest.raises(ConfigError):
        exact_case("sphere", 0.1)


def test_constant_datum(quad4_system):
    datum = InitialDatum(kind=InitialKind.CONSTANT, value=-0.4)
    U = interpolate_initial(datum, quad4_system.mesh, quad4_system.dofmap, quad4_system.constraints)
    np.testing.assert_allclose(U[0::3], -0.4)
    np.testing.assert_allclose(U[1::3], 0.0)
    np.testing.assert_allclose(U[2::3], 0.0)


def test_ellipse_datum_vertex_count():
    mesh = generate_quad_mesh(64)
    x, y = mesh.vertices.T
    inside = ellipse_indicator(x, y)
    assert 0 < inside.sum() < mesh.n_vertices
    system = build_system(generate_quad_mesh(16), threads=1)
    U = interpolate_initial(InitialDatum(kind="ellipse"), system.mesh, system.dofmap)
    assert set(np.round(U[0::3], 12)) == {0.95, -0.95}
    np.testing.assert_array_equal(U[1::3], 0.0)


def test_cross_datum_is_symmetric():
    mesh = generate_quad_mesh(10)
    x, y = mesh.vertices.T
    inside = cross_indicator(x, y).reshape(11, 11)
    np.testing.assert_array_equal(inside, np.rot90(inside))
    np.testing.assert_array_equal(inside, inside.T)
    assert inside[5, 5]
    assert inside[5, 2] and not inside[5, 1]
    assert not inside[3, 3]


def test_smoothed_shape_has_gradients(quad4_system):
    datum = InitialDatum(kind=InitialKind.ELLIPSE, smoothing_width=0.05)
    U = interpolate_initial(datum, quad4_system.mesh, quad4_system.dofmap, quad4_system.constraints)
    assert np.abs(U[0::3]).max() <= 0.95
    assert np.abs(U[1::3]).max() > 0


def test_random_datum_is_deterministic(quad4_system):
    args = quad4_system.mesh, quad4_system.dofmap, quad4_system.constraints
    first = interpolate_initial(InitialDatum(kind="random", seed=3), *args)
    second = interpolate_initial(InitialDatum(kind="random", seed=3), *args)
    other = interpolate_initial(InitialDatum(kind="random", seed=4), *args)
    np.testing.assert_array_equal(first, second)
    assert not np.array_equal(first, other)
    assert np.all(np.abs(first[0::3]) <= 1.0)


def test_initial_datum_validation():
    with pytest.raises(ConfigError):
        InitialDatum(kind="expression")
    with pytest.raises(ConfigError):
        InitialDatum(kind="ellipse", smoothing_width=0.0)
    with pytest.raises(ValueError):
        InitialDatum(kind="blob")


def test_errors_vanish_for_quadratic_data(quad4_system):
    coeffs = [0.2, -0.5, 0.3, 1.0, -2.0, 0.7]

    class Quadratic(ConstantCase):
        def value(self, x, y, t):
            c = coeffs
            return c[0] + c[1] * x + c[2] * y + c[3] * x * x + c[4] * x * y + c[5] * y * y

        def gradient(self, x, y, t):
            c = coeffs
            return c[1] + 2 * c[3] * x + c[4] * y, c[2] + c[4] * x + 2 * c[5] * y

        def hessian(self, x, y, t):
            c = coeffs
            shape = np.shape(x)
            return np.full(shape, 2 * c[3]), np.full(shape, c[4]), np.full(shape, 2 * c[5])

    U = p2_dofs(coeffs, quad4_system.mesh.vertices, quad4_system.dofmap.vertex_scales)
    errors = compute_errors(U, Quadratic(), 0.0, quad4_system)
    assert max(errors.as_tuple()) < 1e-10


def test_l2_error_of_zero_against_one(quad4_system):
    errors = compute_errors(np.zeros(quad4_system.n_dofs), ConstantCase(constant=1.0), 0.0, quad4_system)
    assert errors.l2 == pytest.approx(1.0, rel=1e-12)
    assert errors.h1 == pytest.approx(0.0, abs=1e-14)
    assert errors.h2 == pytest.approx(0.0, abs=1e-14)


def test_circularity_of_disc_and_square():
    xs = (np.arange(128) + 0.5) / 128
    X, Y = np.meshgrid(xs, xs)
    disc = 0.25 - np.hypot(X - 0.5, Y - 0.5)
    assert interface_circularity(xs, xs, disc) > 0.99
    square = 0.25 - np.maximum(np.abs(X - 0.5), np.abs(Y - 0.5))
    assert interface_circularity(xs, xs, square) == pytest.approx(np.pi / 4, abs=0.02)
    with pytest.raises(NoInterfaceError):
        interface_circularity(xs, xs, np.ones_like(X))


def test_level_set_circularity_of_projected_cone():
    system = build_system(generate_quad_mesh(16), threads=1)
    datum = InitialDatum(kind="expression", expression="0.3 - sqrt((x-0.5)^2 + (y-0.5)^2)")
    U = interpolate_initial(datum, system.mesh, system.dofmap, system.constraints)
    assert level_set_circularity(U, system) > 0.95


def test_expression_datum_uses_exact_gradient(quad4_system):
    datum = InitialDatum(kind="expression", expression="x^2 * y + sin(y)")
    mesh, dofmap = quad4_system.mesh, quad4_system.dofmap
    U = interpolate_initial(datum, mesh, dofmap, quad4_system.constraints)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    inner = (x > 1e-12) & (x < 1 - 1e-12) & (y > 1e-12) & (y < 1 - 1e-12)
    scales = dofmap.vertex_scales[inner]
    np.testing.assert_allclose(U[0::3][inner], x[inner] ** 2 * y[inner] + np.sin(y[inner]), rtol=1e-14)
    np.testing.assert_allclose(U[1::3][inner], 2 * x[inner] * y[inner] * scales, rtol=1e-14)
    np.testing.assert_allclose(U[2::3][inner], (x[inner] ** 2 + np.cos(y[inner])) * scales, rtol=1e-14)


def test_manufactured_time_derivative_and_bilaplacian():
    case = ManufacturedCase(gamma=0.1)
    x, y, t = 0.31, 0.58, 0.7
    assert case.time_derivative(x, y, t) == pytest.approx(five_point(lambda s: case.value(x, y, s), t, 1e-4), rel=1e-8)
    bilap = laplacian_fd(lambda px, py: case.laplacian(px, py, t), x, y)
    assert case.bilaplacian(x, y, t) == pytest.approx(bilap, rel=1e-5)
