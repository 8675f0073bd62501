import numpy as np
import pytest
from scipy import integrate

from nonlocal_acf.core.errors import EvaluationError, ParameterError
from nonlocal_acf.models.fields import Ball, VectorField
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import build_field


def _at(u, y: float) -> float:
    return float(u(np.array([[y]]))[0])


@pytest.fixture(scope="module")
def gaussian(params_1d):
    return build_field("gaussian:w=1", params_1d)


@pytest.mark.parametrize("x", [0.0, 0.5, 1.3])
def test_frac_laplacian_of_gaussian(gaussian, params_1d, spec, x):
    value = ops.frac_laplacian(gaussian, [x], params_1d, spec)
    expected = gaussian.oracle("frac_laplacian")(np.array([[x]]), params_1d)[0]
    assert value.scalar == pytest.approx(expected, rel=1e-5)
    assert value.abs_error_estimate < 1e-4 * abs(expected)


def _disc_points(count: int, radius: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    rho = radius * np.sqrt(rng.random(count))
    theta = 2.0 * np.pi * rng.random(count)
    return np.stack([rho * np.cos(theta), rho * np.sin(theta)], axis=-1)


def test_frac_laplacian_of_gaussian_in_the_plane(params_2d, spec):
    u = build_field("gaussian:w=1", params_2d)
    points = _disc_points(10, 1.2, seed=5)
    expected = u.oracle("frac_laplacian")(points, params_2d)
    values = [ops.frac_laplacian(u, x, params_2d, spec).scalar for x in points]
    assert values == pytest.approx(expected, rel=1e-4)


def test_frac_laplacian_of_constant_vanishes(params_1d, spec):
    u = build_field("constant:c=1", params_1d)
    value = ops.frac_laplacian(u, [0.2], params_1d, spec)
    assert abs(value.scalar) <= value.abs_error_estimate + 1e-9
    assert value.truncation_radius_used > 1e6


def test_energy_density_of_gaussian(gaussian, params_1d, spec):
    value = ops.energy_density_G(gaussian, [0.4], params_1d, spec)
    expected = gaussian.oracle("G")(np.array([[0.4]]), params_1d)[0]
    assert value.scalar > 0
    assert value.scalar == pytest.approx(expected, rel=1e-5)


@pytest.mark.parametrize("n,s", [(1, 0.5), (1, 0.25), (2, 0.5)])
def test_product_rule_for_square(spec, n, s):
    params = make_params(n, s)
    u = build_field("gaussian:w=1", params)
    rng = np.random.default_rng(20)
    for x in rng.uniform(-1.5, 1.5, size=(20, n)):
        record = ops.product_rule_residual(u, x, params, spec)
        assert abs(record["residual"]) <= record["combined_error"] + 1e-8 * max(1.0, abs(record["lhs"]))


@pytest.mark.parametrize("n", [1, 2])
def test_operators_commute_with_translation(spec, n):
    params = make_params(n, 0.5)
    u = build_field("gaussian:w=1", params)
    rng = np.random.default_rng(31)
    for _ in range(4):
        a = rng.uniform(-0.5, 0.5, size=n)
        x = rng.uniform(-1.0, 1.0, size=n)
        moved = build_field("shifted:a=" + ",".join(repr(float(v)) for v in a) + ";gaussian:w=1", params)
        for op in (ops.frac_laplacian, ops.energy_density_G, ops.frac_gradient):
            lhs = op(moved, x, params, spec)
            rhs = op(u, x - a, params, spec)
            slack = lhs.abs_error_estimate + rhs.abs_error_estimate + 1e-5
            assert np.all(np.abs(np.asarray(lhs.value) - np.asarray(rhs.value)) <= slack)


def test_energy_pair_is_symmetric(params_1d, spec):
    u = build_field("bump:r=1", params_1d)
    v = build_field("gaussian:w=0.5", params_1d)
    a = ops.energy_pair(u, v, [0.3], params_1d, spec)
    b = ops.energy_pair(v, u, [0.3], params_1d, spec)
    assert a.scalar == pytest.approx(b.scalar, rel=1e-8, abs=1e-12)


def test_frac_gradient_parity(gaussian, params_1d, spec):
    at_origin = ops.frac_gradient(gaussian, [0.0], params_1d, spec)
    assert abs(np.asarray(at_origin.value)[0]) < 1e-10
    right = ops.frac_gradient(gaussian, [0.4], params_1d, spec, component=0)
    left = ops.frac_gradient(gaussian, [-0.4], params_1d, spec, component=0)
    assert right.scalar < 0
    assert right.scalar == pytest.approx(-left.scalar, rel=1e-8)


def test_frac_gradient_of_gaussian(gaussian, params_1d, spec):
    value = ops.frac_gradient(gaussian, [0.4], params_1d, spec)
    expected = gaussian.oracle("frac_gradient")(np.array([[0.4]]), params_1d)[0]
    assert np.asarray(value.value) == pytest.approx(expected, rel=1e-4)


def test_divergence_matches_gradient_in_one_dimension(gaussian, params_1d, spec):
    phi = VectorField("gaussian", [gaussian])
    div = ops.frac_divergence(phi, [0.4], params_1d, spec)
    grad = ops.frac_gradient(gaussian, [0.4], params_1d, spec, component=0)
    assert div.scalar == pytest.approx(grad.scalar, rel=1e-9)


def test_divergence_of_outward_field_is_positive(params_1d, spec):
    phi = VectorField("xbump", [build_field("xbump:r=1", params_1d)])
    value = ops.frac_divergence(phi, [0.0], params_1d, spec)
    assert value.scalar > value.abs_error_estimate


def test_operator_refuses_singular_point(params_1d_quarter, spec):
    phi = build_field("phi_s", params_1d_quarter)
    with pytest.raises(EvaluationError):
        ops.frac_laplacian(phi, [0.0], params_1d_quarter, spec)


def test_point_dimension_checked(gaussian, params_1d, spec):
    with pytest.raises(ParameterError):
        ops.frac_laplacian(gaussian, [0.0, 0.0], params_1d, spec)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_s_mean_of_constant_is_one(params_1d, spec, r):
    one = build_field("constant:c=1", params_1d)
    value = ops.s_mean(one, [0.0], r, params_1d, spec)
    assert value.scalar == pytest.approx(1.0, rel=1e-6)


def test_s_mean_needs_positive_radius(gaussian, params_1d, spec):
    with pytest.raises(ParameterError):
        ops.s_mean(gaussian, [0.0], 0.0, params_1d, spec)


def test_nonlocal_normal_outside_only(params_1d, spec):
    u = build_field("bump:r=0.8", params_1d)
    D = Ball.centered(1, 1.0)
    with pytest.raises(ParameterError):
        ops.nonlocal_normal(u, D, [0.5], params_1d, spec)
    # u vanishes at x = 1.5, so N u(x) = -∫_D u(y) |x-y|^(-1-2s) dy < 0
    value = ops.nonlocal_normal(u, D, [1.5], params_1d, spec)
    expected, _ = integrate.quad(lambda y: -_at(u, y) / (1.5 - y) ** 2, -0.8, 0.8,
                                 epsabs=1e-13, epsrel=1e-11, limit=200)
    assert value.scalar == pytest.approx(expected, rel=1e-6)


def test_weighted_integral_of_bump(params_1d, spec):
    u = build_field("bump:r=1", params_1d)
    value = ops.weighted_integral(u, 0.0, params_1d, spec)
    expected, _ = integrate.quad(lambda y: _at(u, y), -1.0, 1.0, epsabs=1e-13, epsrel=1e-12)
    assert value.scalar == pytest.approx(expected, rel=1e-7)


def test_poisson_kernel_rejects_inside_point(params_1d):
    ball = Ball.centered(1, 1.0)
    assert ops.poisson_kernel([0.0], [2.0], ball, params_1d) > 0
    with pytest.raises(ParameterError):
        ops.poisson_kernel([0.0], [0.5], ball, params_1d)


def test_derived_field_is_memoized_and_radial(gaussian, params_1d, coarse_spec):
    G = ops.energy_density_field(gaussian, params_1d, coarse_spec)
    assert ops.energy_density_field(gaussian, params_1d, coarse_spec) is G
    assert G.derived and G.radial
    a = G(np.array([[0.3]]))[0]
    b = G(np.array([[-0.3]]))[0]
    assert a == b
    direct = ops.energy_density_G(gaussian, [0.3], params_1d, coarse_spec, estimate=False)
    assert a == pytest.approx(direct.scalar, rel=1e-12)


@pytest.mark.slow
def test_gagliardo_energy_of_gaussian(gaussian, params_1d, coarse_spec):
    value = ops.gagliardo_energy(gaussian, params_1d, coarse_spec)
    assert value.scalar == pytest.approx(gaussian.oracle("gagliardo")(params_1d), rel=1e-2)


@pytest.mark.slow
def test_divergence_of_gradient_is_minus_laplacian(gaussian, params_1d, coarse_spec):
    value = ops.frac_divergence(ops.gradient_field(gaussian, params_1d, coarse_spec), [0.0], params_1d, coarse_spec)
    expected = -np.sqrt(2.0 / np.pi)
    assert value.scalar == pytest.approx(expected, rel=1e-2)
