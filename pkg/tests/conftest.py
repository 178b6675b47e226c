import pytest

from lanecoop.core import ControlBounds, ManeuverParams, SafetyParams, SpeedBounds


@pytest.fixture
def bounds():
    return ControlBounds(-7.0, 3.3)


@pytest.fixture
def speeds():
    return SpeedBounds(14.0, 33.0)


@pytest.fixture
def safety():
    return SafetyParams(delta=1.5, phi=0.6)


@pytest.fixture
def params(bounds):
    # study parameters: alpha=0.4, v_d=29, delta_tol=4
    return ManeuverParams.with_derived_beta(
        bounds, alpha=0.4, v_d=29.0, delta_tol=4.0, T_th=20.0)
