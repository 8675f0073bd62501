import numpy as np
import pytest

from nonlocal_acf.core.errors import ParameterError
from nonlocal_acf.models.fields import Ball, VectorField
from nonlocal_acf.services import identity_service as identities
from nonlocal_acf.services.field_catalog import build_field


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_mean_normalization(params_2d, spec, r):
    assert identities.mean_normalization(params_2d, r, spec).scalar == pytest.approx(1.0, rel=1e-6)


@pytest.mark.parametrize("x", [0.0, 0.5])
def test_poisson_field_reproduces_constants(params_1d, spec, x):
    u = build_field("poisson:r=1;g=constant:c=1", params_1d, spec)
    assert u(np.array([[x]]))[0] == pytest.approx(1.0, rel=1e-5)
    # exterior data is returned unchanged
    assert u(np.array([[1.5]]))[0] == 1.0


def test_poisson_field_metadata(params_1d, spec):
    u = build_field("poisson:r=1;g=gaussian:w=1", params_1d, spec)
    assert isinstance(u.metadata["ball"], Ball)
    assert u.metadata["g"].field_id == "gaussian:w=1.0"


def test_mean_value_experiment_needs_poisson_field(params_1d, spec):
    with pytest.raises(ParameterError):
        identities.mean_value_experiment(params_1d, spec, poisson_id="gaussian:w=1")


def test_divergence_identity_needs_support_in_ball(params_1d, spec):
    u = build_field("gaussian:w=1", params_1d)
    with pytest.raises(ParameterError):
        identities.divergence_residual(u, Ball.centered(1, 1.0), params_1d, spec)


def test_duality_needs_fields_supported_in_ball(params_1d, spec):
    f = build_field("bump:r=0.5", params_1d)
    phi = VectorField("gaussian", [build_field("gaussian:w=1", params_1d)])
    with pytest.raises(ParameterError):
        identities.duality_residual(f, phi, Ball.centered(1, 1.0), params_1d, spec)


def test_ball_dimension_must_match(params_1d, spec):
    u = build_field("bump:r=0.5", params_1d)
    with pytest.raises(ParameterError):
        identities.green_residual(u, u, Ball.centered(2, 1.0), params_1d, spec)


@pytest.mark.slow
def test_divergence_identity(params_1d, spec):
    f = build_field("bump:r=0.8", params_1d)
    record = identities.divergence_residual(f, Ball.centered(1, 1.0), params_1d, spec)
    assert record["identity"] == "divergence"
    assert record["relative_residual"] <= 1e-3


@pytest.mark.slow
def test_divergence_is_dual_to_gradient(params_1d, spec):
    f = build_field("shifted:a=0.2;bump:r=0.7", params_1d)
    phi = VectorField("xbump", [build_field("xbump:r=0.8", params_1d)])
    record = identities.duality_residual(f, phi, Ball.centered(1, 1.0), params_1d, spec)
    assert record["identity"] == "duality"
    assert abs(record["lhs"]) > 1e-3
    assert record["relative_residual"] < 1e-3


@pytest.mark.slow
def test_green_identity(params_1d, spec):
    f = build_field("bump:r=0.8", params_1d)
    g = build_field("shifted:a=0.3;bump:r=0.9", params_1d)
    record = identities.green_residual(f, g, Ball.centered(1, 1.0), params_1d, spec)
    assert record["relative_residual"] <= 1e-3


@pytest.mark.slow
def test_mean_value_property_of_poisson_field(params_1d, spec):
    u = build_field("poisson:r=1;g=gaussian:w=1", params_1d, spec)
    result = identities.mean_value_property(u, params_1d, spec, fractions=(0.5,))
    u0 = result["rows"][0]["u0"]
    assert result["max_abs_diff"] <= 1e-3 * max(1.0, abs(u0))


@pytest.mark.slow
def test_integration_by_parts(params_1d, spec):
    f = build_field("bump:r=0.8", params_1d)
    g = build_field("shifted:a=0.3;bump:r=0.9", params_1d)
    record = identities.parts_residual(f, g, Ball.centered(1, 1.0), params_1d, spec)
    assert record["identity"] == "parts"
    assert record["relative_residual"] <= 1e-3 or abs(record["residual"]) <= record["lhs_error"] + record["rhs_error"]
