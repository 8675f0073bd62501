import pytest

from nonlocal_acf.core.cache import clear_registry
from nonlocal_acf.models.quadrature import QuadratureSpec
from nonlocal_acf.services import operator_service as ops
from nonlocal_acf.services.constants_service import make_params


@pytest.fixture(scope="session")
def spec():
    """Default discretization."""
    return QuadratureSpec()


@pytest.fixture(scope="session")
def coarse_spec():
    """Cheap discretization for nested quadrature and end-to-end runs."""
    return QuadratureSpec(panels=20, nodes_per_panel=6, angular_nodes=16, outer_nodes=8,
                          far_panels=6, resolution=0.5, tail_tol=1e-8)


@pytest.fixture(scope="session")
def params_1d():
    return make_params(1, 0.5)


@pytest.fixture(scope="session")
def params_1d_quarter():
    return make_params(1, 0.25)


@pytest.fixture(scope="session")
def params_2d():
    return make_params(2, 0.5)


@pytest.fixture(autouse=True, scope="module")
def fresh_caches():
    """Derived fields and point caches do not leak between test modules."""
    ops.clear_derived()
    clear_registry()
    yield
    ops.clear_derived()
    clear_registry()
