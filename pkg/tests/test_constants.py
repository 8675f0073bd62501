import math

import pytest

from nonlocal_acf.core.errors import ParameterError
from nonlocal_acf.services import constants_service
from nonlocal_acf.services.constants_service import (
    asymptotic_a,
    asymptotic_a_limit,
    asymptotic_c_limit,
    closed_form_c,
    make_params,
    unit_ball_volume,
    validate_order,
)


def test_half_order_constant_in_one_dimension():
    assert closed_form_c(1, 0.5) == pytest.approx(1.0 / math.pi, rel=1e-14)


@pytest.mark.parametrize("n,s", [(1, 0.25), (1, 0.5), (1, 0.75), (2, 0.5), (3, 0.3)])
def test_defining_integral_matches_closed_form(n, s):
    params = make_params(n, s)
    assert params.c_ns == pytest.approx(closed_form_c(n, s), rel=1e-6)
    assert params.c_ns_error <= 1e-6 * params.c_ns


def test_poisson_constant_two_dimensions():
    assert make_params(2, 0.5).a_ns == pytest.approx(0.101321, rel=1e-5)


@pytest.mark.parametrize("n,expected", [(1, 2.0), (2, math.pi), (3, 4.0 * math.pi / 3.0)])
def test_unit_ball_volume(n, expected):
    assert unit_ball_volume(n) == pytest.approx(expected)
    assert make_params(n, 0.4).surface_area == pytest.approx(n * expected)


def test_fundamental_constant_absent_when_2s_equals_n():
    assert make_params(1, 0.5).kappa_ns is None
    assert not make_params(1, 0.5).has_kappa
    assert make_params(1, 0.25).kappa_ns > 0


def test_make_params_is_memoized():
    assert make_params(1, 0.5) is make_params(1, 0.5)


@pytest.mark.parametrize("n,s", [(0, 0.5), (4, 0.5), (1, 0.0), (1, 1.0), (2, -0.1)])
def test_invalid_order_rejected(n, s):
    with pytest.raises(ParameterError):
        validate_order(n, s)


def test_asymptotic_limits():
    assert asymptotic_a_limit(1) == pytest.approx(2.0)
    assert asymptotic_a_limit(2) == pytest.approx(2.0 / math.pi)
    assert asymptotic_a(1, 0.999) == pytest.approx(asymptotic_a_limit(1), rel=1e-5)
    # C_{n,s} / (1 - s) -> 4 / omega_n
    assert asymptotic_c_limit(1) == pytest.approx(2.0)
    assert closed_form_c(1, 0.999) / 0.001 == pytest.approx(asymptotic_c_limit(1), rel=1e-2)


@pytest.fixture
def uncached_params():
    make_params.cache_clear()
    yield
    make_params.cache_clear()


def test_constant_refused_when_closed_form_disagrees(uncached_params, monkeypatch):
    monkeypatch.setattr(constants_service, "closed_form_c", lambda n, s: 2.0)
    with pytest.raises(ParameterError) as info:
        make_params(1, 0.3)
    assert info.value.module == "constants"


def test_constant_refused_when_doubling_moves_it(uncached_params, monkeypatch):
    calls = []

    def drifting(n, s, spec):
        calls.append(spec)
        return 1.0 + 1e-3 * len(calls)

    monkeypatch.setattr(constants_service, "_defining_integral", drifting)
    with pytest.raises(ParameterError):
        make_params(1, 0.3)
