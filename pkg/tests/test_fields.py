import dataclasses
import math

import numpy as np
import pytest

from nonlocal_acf.core.enums import Regularity
from nonlocal_acf.core.errors import EvaluationError, FieldError, ParameterError
from nonlocal_acf.models.fields import Ball, TailEnvelope, as_points
from nonlocal_acf.services.constants_service import make_params
from nonlocal_acf.services.field_catalog import (
    build_field,
    difference_field,
    gaussian_fourier_laplacian,
    verify_envelope,
)


def test_gaussian_values_and_metadata(params_1d):
    u = build_field("gaussian:w=1", params_1d)
    assert u(np.array([0.0])) == pytest.approx(1.0)
    assert u(np.array([1.0])) == pytest.approx(math.exp(-0.5))
    assert u.radial and not u.compact
    assert u.regularity == Regularity.C4
    assert u.field_id == "gaussian:w=1.0"


def test_bump_is_compactly_supported(params_2d):
    u = build_field("bump:r=0.5", params_2d)
    values = u(np.array([[0.0, 0.0], [0.6, 0.0], [0.0, -0.5]]))
    assert values[0] == pytest.approx(1.0)
    assert values[1] == 0.0 and values[2] == 0.0
    assert u.extent == pytest.approx(0.5)


def test_xbump_is_odd(params_1d):
    u = build_field("xbump:r=1", params_1d)
    x = np.array([[0.3], [-0.3]])
    a, b = u(x)
    assert a == pytest.approx(-b)


def test_scaled_field(params_1d):
    u = build_field("scaled:lam=2;gaussian:w=1", params_1d)
    expected = 2.0 ** -0.5 * math.exp(-0.6 ** 2 / 2.0)
    assert u(np.array([0.3])) == pytest.approx(expected)
    assert u.length_scale == pytest.approx(0.5)


def test_shifted_and_times_fields(params_1d):
    shifted = build_field("shifted:a=0.5;gaussian:w=1", params_1d)
    assert shifted(np.array([0.5])) == pytest.approx(1.0)
    negated = build_field("times:c=-1;gaussian:w=1", params_1d)
    assert negated(np.array([0.0])) == pytest.approx(-1.0)
    assert negated.oracle("G")(np.array([[0.2]]), params_1d)[0] == pytest.approx(
        build_field("gaussian:w=1", params_1d).oracle("G")(np.array([[0.2]]), params_1d)[0])


def test_difference_field(params_1d):
    u = build_field("bump:r=1", params_1d)
    w = difference_field(u, np.array([0.2]))
    y = np.array([[0.1]])
    assert w(y)[0] == pytest.approx(u(y)[0] - u(y - 0.2)[0])
    assert w.compact


@pytest.mark.parametrize("field_id", ["nope:r=1", "bump", "bump:r=abc", "poisson:r=1;h=gaussian:w=1"])
def test_bad_field_ids(params_1d, field_id):
    with pytest.raises(FieldError):
        build_field(field_id, params_1d)


def test_fundamental_solution_refuses_pole(params_1d_quarter, params_1d):
    phi = build_field("phi_s", params_1d_quarter)
    assert phi.singular
    with pytest.raises(EvaluationError):
        phi(np.array([0.0]))
    # 2s = n: no fundamental solution
    with pytest.raises(FieldError):
        build_field("phi_s", params_1d)


@pytest.mark.parametrize("field_id,n,s", [
    ("gaussian:w=0.7", 2, 0.5),
    ("bump:r=1", 2, 0.5),
    ("xbump:r=0.8", 1, 0.5),
    ("constant:c=-2", 1, 0.5),
    ("phi_s", 1, 0.25),
    ("phi_s", 3, 0.5),
    ("poisson:r=1;g=gaussian:w=1", 1, 0.5),
    ("poisson:r=1.5;g=gaussian:w=0.2", 1, 0.5),
    ("scaled:lam=2;gaussian:w=1", 1, 0.5),
    ("shifted:a=0.3,-0.2;gaussian:w=1", 2, 0.5),
    ("shifted:a=0.5;bump:r=1", 1, 0.5),
    ("times:c=3;phi_s", 1, 0.25),
    ("square:gaussian:w=0.7", 2, 0.5),
    ("square:bump:r=1", 1, 0.5),
])
def test_catalog_envelopes_hold(field_id, n, s):
    u = build_field(field_id, make_params(n, s))
    assert verify_envelope(u) <= 1.0


def test_square_field_squares_values(params_2d):
    u = build_field("gaussian:w=1", params_2d)
    sq = build_field("square:gaussian:w=1", params_2d)
    points = np.array([[0.0, 0.0], [0.4, -1.1], [2.0, 0.5]])
    np.testing.assert_allclose(sq(points), u(points) ** 2)
    assert sq.field_id.startswith("square:")
    assert sq.tail.power == pytest.approx(2.0 * u.tail.power)


def test_square_of_singular_field_refused(params_1d_quarter):
    with pytest.raises(FieldError):
        build_field("square:phi_s", params_1d_quarter)


def test_envelope_violation_detected(params_1d):
    u = build_field("constant:c=2", params_1d)
    tight = dataclasses.replace(u, tail=TailEnvelope(0.5 * u.tail.amplitude, u.tail.power, u.tail.radius))
    assert verify_envelope(tight) > 1.0


@pytest.mark.parametrize("n,s", [(1, 0.5), (2, 0.3)])
def test_gaussian_oracles_agree(n, s):
    """Kummer-function closed form against the radial Fourier integral."""
    params = make_params(n, s)
    u = build_field("gaussian:w=1", params)
    points = np.array([[0.0] * n, [0.5] + [0.0] * (n - 1), [1.3] + [0.0] * (n - 1)])
    closed = u.oracle("frac_laplacian")(points, params)
    fourier = gaussian_fourier_laplacian(points, n, 1.0, s)
    assert closed == pytest.approx(fourier, rel=1e-7)


def test_as_points_and_ball_validation():
    assert as_points(0.5, 1).shape == (1, 1)
    assert as_points([0.1, 0.2, 0.3], 1).shape == (3, 1)
    with pytest.raises(ParameterError):
        as_points([[0.1, 0.2]], 3)
    with pytest.raises(ParameterError):
        Ball.centered(2, 0.0)
