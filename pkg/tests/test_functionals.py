import math

import numpy as np
import pytest

from nonlocal_acf.core.enums import FunctionalKind
from nonlocal_acf.core.errors import ParameterError
from nonlocal_acf.models.results import FunctionalCurve
from nonlocal_acf.services import functional_service as fs
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services.field_catalog import build_field


def test_monotone_prefix():
    assert fs.monotone_prefix([3.0, 2.0, 1.0], [0.0, 0.0, 0.0]) == 3
    assert fs.monotone_prefix([1.0, 2.0, 3.0], [0.0, 0.0, 0.0]) == 3
    assert fs.monotone_prefix([1.0, 0.5, 0.6], [0.01, 0.01, 0.01]) == 1
    # a drop inside three times the summed error is tolerated
    assert fs.monotone_prefix([1.0, 0.99, 1.2], [0.01, 0.01, 0.01]) == 3
    assert fs.monotone_prefix([5.0], [0.0]) == 1
    assert fs.monotone_prefix([], []) == 0


def test_curve_defect_and_grid_validation():
    curve = FunctionalCurve(radii=[0.1, 0.2, 0.3], values=[1.0, 0.8, 0.9], error_estimates=[0.1, 0.1, 0.1])
    assert curve.monotonicity_defect == pytest.approx(0.2)
    assert curve.summed_error == pytest.approx(0.3)
    with pytest.raises(ParameterError):
        FunctionalCurve(radii=[0.2, 0.1], values=[0.0, 0.0], error_estimates=[0.0, 0.0])


def test_richardson_limit_of_linear_data():
    s = [0.9, 0.95, 0.99]
    values = [2.0 + 3.0 * (1.0 - t) for t in s]
    assert fs.richardson_limit(s, values) == pytest.approx(2.0, rel=1e-10)
    assert fs.richardson_limit([0.9], [4.0]) == 4.0


def test_richardson_limit_leaves_second_order_remainder():
    # y = 2 + h + h^2: one step removes h and leaves -h_a h_b
    s = [0.6, 0.9, 0.99]
    values = [2.0 + (1.0 - t) + (1.0 - t) ** 2 for t in s]
    assert fs.richardson_limit(s, values) == pytest.approx(2.0 - 0.1 * 0.01, rel=1e-10)


def test_precondition_points():
    points = fs.precondition_points(2, 1.0)
    assert points.shape == (17, 2)
    assert np.all(points[0] == 0.0)
    assert [0.25, 0.0] in points.tolist() and [0.0, -1.0] in points.tolist()


def test_local_target_factor(params_1d, params_2d):
    assert fs.local_target_factor(FunctionalKind.G, params_1d) == pytest.approx(1.0)
    assert fs.local_target_factor(FunctionalKind.GRAD, params_1d) == pytest.approx(0.5)
    assert fs.local_target_factor(FunctionalKind.G, params_2d) == pytest.approx(1.0 / math.pi)


def test_local_functional_of_gaussian(params_1d, spec):
    u = build_field("gaussian:w=1", params_1d)
    # 2 ∫_0^1 ρ^3 e^(-ρ^2) dρ
    assert fs.j_acf_local(u, 1.0, spec) == pytest.approx(1.0 - 2.0 / math.e, rel=1e-10)


@pytest.mark.parametrize("grid", [[], [0.2, 0.1], [-0.1, 0.3], [0.1, 0.1]])
def test_monotonicity_grid_rejected(params_1d, coarse_spec, grid):
    u = build_field("bump:r=1", params_1d)
    with pytest.raises(ParameterError):
        fs.monotonicity_experiment(u, grid, params_1d, coarse_spec)


def test_functional_argument_checks(params_1d, coarse_spec):
    u = build_field("bump:r=1", params_1d)
    with pytest.raises(ParameterError):
        fs.j_acf(u, 0.0, params_1d, coarse_spec)
    with pytest.raises(ParameterError):
        fs.j_acf(u, 1.0, params_1d, coarse_spec, route="interior")
    with pytest.raises(ParameterError):
        fs.stability_experiment(u, 0.5, [0.9, 0.8], 1, coarse_spec)
    # weight |x|^(2s-n) is trivial when 2s = n
    with pytest.raises(ParameterError):
        fs.acf_bound_experiment(u, [0.5], params_1d, coarse_spec)


@pytest.mark.parametrize("r", [0.3, 1.0])
def test_kelvin_and_exterior_means_agree(params_1d, spec, r):
    u = build_field("gaussian:w=1", params_1d)
    exterior = ops.s_mean(u, [0.0], r, params_1d, spec)
    kelvin = fs.kelvin_mean(u, r, params_1d, spec)
    assert kelvin.scalar == pytest.approx(exterior.scalar, rel=1e-5)


def test_kelvin_mean_of_constant(params_2d, spec):
    one = build_field("constant:c=1", params_2d)
    assert fs.kelvin_mean(one, 0.5, params_2d, spec).scalar == pytest.approx(1.0, rel=1e-5)


@pytest.mark.slow
def test_constant_field_curve_is_flat(params_1d, coarse_spec):
    u = build_field("constant:c=1", params_1d)
    curve = fs.monotonicity_experiment(u, [0.2, 0.4, 0.8], params_1d, coarse_spec)
    assert all(abs(v) < 1e-6 for v in curve.values)
    assert curve.monotonicity_defect <= 3.0 * curve.summed_error + 1e-6


@pytest.mark.slow
def test_scaling_invariance_of_gaussian(params_1d, coarse_spec):
    u = build_field("gaussian:w=1", params_1d)
    result = fs.scaling_experiment(u, 0.5, [2.0], params_1d, coarse_spec, points=[[0.3]])
    assert result["max_rel_diff"] <= 1e-2
    row = result["pointwise"][0]
    assert row["G_diff"] <= row["G_error"] + 1e-6


@pytest.mark.slow
@pytest.mark.parametrize("R", [0.25, 1.0])
def test_exterior_and_kelvin_routes_agree(params_1d, coarse_spec, R):
    u = build_field("gaussian:w=1", params_1d)
    exterior = fs.j_acf(u, R, params_1d, coarse_spec)
    kelvin = fs.j_acf_kelvin(u, R, params_1d, coarse_spec)
    slack = 1e-3 * abs(exterior.scalar) + exterior.abs_error_estimate + kelvin.abs_error_estimate
    assert abs(exterior.scalar - kelvin.scalar) <= slack


@pytest.mark.slow
def test_gradient_functional_is_positive(params_1d, coarse_spec):
    u = build_field("gaussian:w=1", params_1d)
    value = fs.j_acf_grad(u, 0.5, params_1d, coarse_spec)
    assert value.scalar > value.abs_error_estimate


@pytest.mark.slow
def test_gradient_estimate_ratio_is_scale_free(params_1d, coarse_spec):
    bump = build_field("bump:r=1", params_1d)
    u = build_field("times:c=3;bump:r=1", params_1d)
    result = fs.gradient_estimate_experiment(u, params_1d, coarse_spec, R_values=(0.5,))
    assert result["finite"] and len(result["rows"]) == 1
    assert result["rows"][0]["ratio"] > 0
    assert result["normalization_rel_change"] <= 1e-6
    assert result["u_sup"] == pytest.approx(3.0 * float(bump(np.zeros((1, 1)))[0]), rel=1e-12)
