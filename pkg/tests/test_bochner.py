import math

import numpy as np
import pytest

from nonlocal_acf.core.errors import CostGuardError, ParameterError
from nonlocal_acf.services import bochner_service as bochner
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import build_field


@pytest.mark.parametrize("n,k,alpha,s,expected", [
    (1, 3, [3], 0.5, 0.4),
    (1, 3, [3], 0.25, 4.0 / 11.0),
    (1, 1, [1], 0.25, 4.0 / 3.0),
    (2, 1, [1, 0], 0.5, math.pi),
    (2, 2, [2, 0], 0.5, 2.0 * math.pi / 3.0),
])
def test_moment_closed_form(n, k, alpha, s, expected):
    assert bochner.moment_integral(n, k, alpha, s) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("n,k,s", [(1, 1, 0.25), (2, 2, 0.5), (3, 3, 0.75), (3, 1, 0.9)])
def test_moment_quadrature_matches_closed_form(spec, n, k, s):
    alpha = [k] + [0] * (n - 1)
    numeric = bochner.moment_quadrature(n, k, alpha, s, spec)
    assert numeric["value"] == pytest.approx(bochner.moment_integral(n, k, alpha, s), rel=1e-6)
    assert numeric["monomial"] > 0


def test_moments_table_rows(coarse_spec):
    rows = bochner.moments_table(grid_n=(1,), grid_k=(1, 2), grid_s=(0.5,), spec=coarse_spec)
    assert [(r["n"], r["k"]) for r in rows] == [(1, 1), (1, 2)]
    assert all(r["rel_diff"] < 1e-6 for r in rows)


@pytest.mark.parametrize("n,k,alpha", [(2, 2, [1]), (1, 4, [4]), (2, 1, [2, -1]), (2, 2, [1, 0])])
def test_bad_multi_index(n, k, alpha):
    with pytest.raises(ParameterError):
        bochner.moment_integral(n, k, alpha, 0.5)


def test_nested_quadrature_guarded_in_two_dimensions(params_2d, spec):
    u = build_field("gaussian:w=1", params_2d)
    with pytest.raises(CostGuardError):
        bochner.bochner_residual_G(u, [0.0, 0.0], params_2d, spec)
    with pytest.raises(CostGuardError):
        bochner.bochner_residual_grad(u, [0.0, 0.0], params_2d, spec)
    with pytest.raises(CostGuardError):
        bochner.commutation_check(u, [[0.1, 0.0]], params_2d, spec)


@pytest.mark.parametrize("n,s", [(1, 0.5), (1, 0.9), (2, 0.5)])
def test_kernel_weight_integrates_to_one(spec, n, s):
    params = make_params(n, s)
    one = build_field("constant:c=1", params)
    assert bochner.kernel_weight_mean(one, 0.7, params, spec).scalar == pytest.approx(1.0, rel=1e-6)


def test_sphere_average(params_2d, spec):
    u = build_field("gaussian:w=1", params_2d)
    assert bochner.sphere_average(u, 0.5, spec) == pytest.approx(math.exp(-0.125), rel=1e-12)


def test_monte_carlo_is_seeded(params_1d, coarse_spec):
    u = build_field("gaussian:w=1", params_1d)
    a = bochner.monte_carlo_term_square(u, [0.2], params_1d, samples=20000, seed=3, spec=coarse_spec)
    b = bochner.monte_carlo_term_square(u, [0.2], params_1d, samples=20000, seed=3, spec=coarse_spec)
    assert a["value"] == b["value"]
    assert a["value"] > 0 and a["stderr"] > 0


@pytest.mark.slow
def test_square_term_against_monte_carlo(params_1d, coarse_spec):
    u = build_field("gaussian:w=1", params_1d)
    quad_value = bochner.term_square(u, [0.2], params_1d, coarse_spec)
    mc = bochner.monte_carlo_term_square(u, [0.2], params_1d, samples=200000, seed=1, spec=coarse_spec)
    assert quad_value.scalar > 0
    assert abs(mc["value"] - quad_value.scalar) <= 5.0 * mc["stderr"] + 0.05 * quad_value.scalar


@pytest.mark.slow
def test_bochner_identity_for_energy_density(params_1d, coarse_spec):
    u = build_field("gaussian:w=1", params_1d)
    r = bochner.bochner_residual_G(u, np.array([0.3]), params_1d, coarse_spec)
    assert r.term_square >= -r.combined_error
    assert r.relative_residual <= 5e-2 or abs(r.residual) <= r.combined_error


def test_kernel_mean_approaches_sphere_average(spec):
    u = build_field("gaussian:w=1", make_params(1, 0.5))
    result = bochner.kernel_limit_check(1, 0.7, u, [0.6, 0.9], spec)
    first, last = result["rows"]
    assert first["target"] == pytest.approx(math.exp(-0.245), rel=1e-12)
    assert last["abs_diff"] < first["abs_diff"]
