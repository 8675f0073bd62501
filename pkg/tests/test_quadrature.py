import math

import numpy as np
import pytest
from pydantic import ValidationError

from nonlocal_acf.core.errors import NonIntegrableError, ParameterError
from nonlocal_acf.models.fields import Ball, TailEnvelope
from nonlocal_acf.models.quadrature import QuadratureSpec, RadialIntegrand
from nonlocal_acf.services import quadrature_service as quad


def test_gauss_legendre_exact_for_polynomials():
    x, w = quad.gauss_legendre(5)
    assert float(w @ x ** 8) == pytest.approx(2.0 / 9.0, rel=1e-13)
    assert float(w @ x ** 7) == pytest.approx(0.0, abs=1e-14)


def test_gauss_jacobi_weighted_rule():
    t, w = quad.gauss_jacobi_weighted(6, 0.5)
    assert np.all((t > 0) & (t < 1))
    # ∫_0^1 t^0.5 t^3 dt
    assert float(w @ t ** 3) == pytest.approx(1.0 / 4.5, rel=1e-12)


@pytest.mark.parametrize("beta", [-0.9, -0.5, 0.0, 0.4])
def test_graded_rule_integrates_endpoint_power(spec, beta):
    rho, w = quad.build_rule(0.0, 1.0, spec, beta_a=beta)
    assert float(w @ rho ** beta) == pytest.approx(1.0 / (1.0 + beta), rel=1e-9)


def test_graded_rule_at_right_endpoint(spec):
    t, w = quad.build_rule(0.0, 1.0, spec, beta_b=-0.3)
    assert float(w @ (1.0 - t) ** -0.3) == pytest.approx(1.0 / 0.7, rel=1e-9)


def test_interior_breakpoints_are_knots(spec):
    t, w = quad.build_rule(0.0, 2.0, spec, interior=[0.7])
    assert float(w.sum()) == pytest.approx(2.0, rel=1e-13)
    # |t - 0.7| is only Lipschitz, but exact per panel once 0.7 is a knot
    assert float(w @ np.abs(t - 0.7)) == pytest.approx((0.7 ** 2 + 1.3 ** 2) / 2.0, rel=1e-12)


@pytest.mark.parametrize("beta", [-1.0, -1.5])
def test_divergent_exponent_rejected(spec, beta):
    with pytest.raises(NonIntegrableError):
        quad.build_rule(0.0, 1.0, spec, beta_a=beta)


@pytest.mark.parametrize("n,area", [(1, 2.0), (2, 2.0 * math.pi), (3, 4.0 * math.pi)])
def test_angular_rule_is_antipodal(n, area):
    dirs, w = quad.angular_rule(n, 32)
    k = len(dirs) // 2
    assert float(w.sum()) == pytest.approx(area, rel=1e-12)
    assert np.allclose(dirs[k:], -dirs[:k])
    assert np.allclose(np.linalg.norm(dirs, axis=-1), 1.0)


def test_angular_rule_rejects_high_dimension():
    with pytest.raises(ParameterError):
        quad.angular_rule(4, 32)


def test_truncation_radius_bounded_field():
    envelope = TailEnvelope(1.0, 0.0, 1.0)
    T = quad.truncation_radius(envelope, kernel_decay=2.0, tol=1e-8, n=1)
    assert T == pytest.approx(2e8, rel=1e-12)
    assert quad.tail_bound(envelope, 2.0, T, 1) == pytest.approx(1e-8, rel=1e-12)


def test_truncation_radius_compact_and_divergent():
    assert quad.truncation_radius(TailEnvelope(3.0, math.inf, 0.5), 1.5, 1e-10, 1) == 0.5
    with pytest.raises(NonIntegrableError):
        quad.truncation_radius(TailEnvelope(1.0, 0.0, 1.0), kernel_decay=1.0, tol=1e-8, n=1)


def test_sphere_crossings_and_interfaces():
    x = np.array([0.0, 0.0])
    theta = np.array([1.0, 0.0])
    assert quad.sphere_crossings(x, theta, Ball.centered(2, 1.0)) == pytest.approx((-1.0, 1.0))
    assert quad.sphere_crossings(np.array([0.0, 2.0]), theta, Ball.centered(2, 1.0)) is None
    assert quad.interface_hits(x, theta, [Ball.centered(2, 1.0)]) == pytest.approx([1.0])


def test_radial_integral_with_origin_singularity(spec):
    integrand = RadialIntegrand(beta=-0.4, evaluator=lambda rho, theta: rho ** -0.4, dim=2)
    result = quad.integrate_radial(integrand, spec, 1.0)
    assert result.value == pytest.approx(2.0 * math.pi / 0.6, rel=1e-9)
    assert result.error_estimate < 1e-8


def test_radial_integral_needs_outer_radius(spec):
    integrand = RadialIntegrand(beta=0.0, evaluator=lambda rho, theta: rho, dim=1, singular_radius=1.0)
    with pytest.raises(ParameterError):
        quad.integrate_radial(integrand, spec, 0.5)


@pytest.mark.parametrize("n", [2, 3])
def test_radial_integral_is_rotation_invariant(spec, n):
    rotation = quad.random_rotation(n, np.random.default_rng(11))
    assert np.allclose(rotation @ rotation.T, np.eye(n))
    assert np.linalg.det(rotation) == pytest.approx(1.0)
    integrand = RadialIntegrand(beta=-0.4, evaluator=lambda rho, theta: rho ** (n - 1.4) * np.exp(-rho), dim=n)
    plain = quad.integrate_radial(integrand, spec, 2.0)
    rotated = quad.integrate_radial(integrand, spec, 2.0, rotation=rotation)
    assert rotated.value == pytest.approx(plain.value, rel=1e-12)


def test_self_check_converges(spec):
    integrand = RadialIntegrand(beta=-0.4, evaluator=lambda rho, theta: rho ** -0.4 * np.cos(rho), dim=1)
    report = quad.self_check(spec, integrand)
    assert len(report.values) == 3
    assert report.final_error < 1e-8


def test_spec_validation_and_companions():
    with pytest.raises(ValidationError):
        QuadratureSpec(angular_nodes=30)
    with pytest.raises(ValidationError):
        QuadratureSpec(grading_ratio=1.5)
    spec = QuadratureSpec()
    assert spec.coarse().nodes_per_panel == spec.nodes_per_panel // 2
    assert spec.doubled().panels == 2 * spec.panels
    assert spec.tolerance(2) == 1e-6


def test_spec_key_is_stable():
    assert quad.spec_key(QuadratureSpec()) == quad.spec_key(QuadratureSpec())
    assert quad.spec_key(QuadratureSpec()) != quad.spec_key(QuadratureSpec(panels=41))
