import math

import pytest
from hypothesis import given, strategies as st

from delayplatoon import ConfigError, ControllerGains, PlantParams, SpacingPolicy, VehicleState, gamma, gamma_r
from delayplatoon.model import steady_spacing

pos = st.floats(min_value=1e-3, max_value=10.0, allow_nan=False)


def test_gamma_reference_gains():
    g = ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.75, ell=0.1)
    assert gamma(g) == pytest.approx(0.6805, abs=1e-12)


def test_gamma_r_values():
    g3 = ControllerGains(ka=0.2, kv=0.16, kp=0.02, hw=0.4, ell=0.1, r=3)
    assert gamma_r(g3) == pytest.approx(3 * 0.16 + 6 * 0.4 * 0.02, abs=1e-12)
    assert gamma_r(g3) == pytest.approx(0.528, abs=1e-12)
    g2 = ControllerGains(ka=0.2, kv=0.35, kp=0.03, hw=0.6, ell=0.1, r=2)
    assert gamma_r(g2) == pytest.approx(2 * 0.35 + 3 * 0.6 * 0.03, abs=1e-12)


def test_gamma_small_kp_limit():
    # kp must be positive, so approach the kp = 0 value from above
    g = ControllerGains(ka=0.0, kv=1.0, kp=1e-15, hw=5.0)
    assert gamma(g) == pytest.approx(1.0, abs=1e-12)


@given(kv=pos, kp=pos, hw=pos, ka=st.floats(min_value=0, max_value=0.99))
def test_gamma_r_reduces_exactly(kv, kp, hw, ka):
    g = ControllerGains(ka=ka, kv=kv, kp=kp, hw=hw, ell=0.1, r=1)
    assert gamma_r(g) == gamma(g)


@given(kv=pos, kp=pos, hw=pos, r=st.integers(1, 5), bump=st.floats(1e-3, 1.0))
def test_gamma_monotone(kv, kp, hw, r, bump):
    base = ControllerGains(ka=0.1 / r, kv=kv, kp=kp, hw=hw, r=r)
    for field in ("kv", "kp", "hw"):
        bigger = ControllerGains(**{**base.__dict__, field: getattr(base, field) + bump})
        assert gamma(bigger) > gamma(base)
        assert gamma_r(bigger) > gamma_r(base)


@pytest.mark.parametrize("d,hw,v,expected", [(5, 0.75, 25, 23.75), (5, 0.75, 0, 5.0), (2.5, 0.4, 25, 12.5)])
def test_steady_spacing(d, hw, v, expected):
    assert steady_spacing(SpacingPolicy(d, hw), v) == pytest.approx(expected)


@given(d=pos, hw=pos, v=st.floats(min_value=0, max_value=60))
def test_steady_spacing_at_least_standstill(d, hw, v):
    assert steady_spacing(SpacingPolicy(d, hw), v) >= d


def test_negative_speed_rejected():
    with pytest.raises(ConfigError):
        steady_spacing(SpacingPolicy(5, 0.75), -1.0)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(ka=0.5, kv=0.0, kp=0.014, hw=0.75),
        dict(ka=0.5, kv=0.67, kp=-1.0, hw=0.75),
        dict(ka=0.5, kv=0.67, kp=0.014, hw=0.0),
        dict(ka=0.5, kv=0.67, kp=0.014, hw=0.75, ell=-0.1),
        dict(ka=0.5, kv=0.67, kp=0.014, hw=0.75, r=0),
        dict(ka=0.5, kv=0.67, kp=0.014, hw=0.75, r=1.5),
        dict(ka=-0.1, kv=0.67, kp=0.014, hw=0.75),
    ],
)
def test_invalid_gains(kwargs):
    with pytest.raises(ConfigError):
        ControllerGains(**kwargs)


def test_certifiable_ka():
    assert ControllerGains(ka=0.5, kv=1, kp=1, hw=1).certifiable_ka
    assert not ControllerGains(ka=0.4, kv=1, kp=1, hw=1, r=3).certifiable_ka
    assert not ControllerGains(ka=1.5, kv=1, kp=1, hw=1).certifiable_ka


def test_plant_and_state_validation():
    assert PlantParams.worst_case(0.5) == PlantParams(0.5, 0.5)
    with pytest.raises(ConfigError):
        PlantParams(0.6, 0.5)
    with pytest.raises(ConfigError):
        PlantParams(0.0, 0.5)
    with pytest.raises(ConfigError):
        SpacingPolicy(0.0, 0.75)
    with pytest.raises(ConfigError):
        VehicleState(math.nan, 0.0, 0.0)
