"""Built-in platoon scenarios and gain sets used in the reproduction runs."""
from __future__ import annotations

from .errors import ConfigError
from .model import ControllerGains, PlantParams, SpacingPolicy
from .simulator import DEFAULT_STEP, LeadProfile, Scenario, VehicleConfig

TAU0 = 0.5
ELL = 0.1
CRUISE_SPEED = 25.0
N_FOLLOWERS = 12
D_CACC = 5.0
D_CACC_PLUS = 2.5

CACC_GAINS = ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.75, ell=ELL, r=1)
CACC_UNSTABLE_GAINS = ControllerGains(ka=0.5, kv=0.67, kp=0.014, hw=0.65, ell=ELL, r=1)
CACC_PLUS_R2_GAINS = ControllerGains(ka=0.2, kv=0.35, kp=0.03, hw=0.6, ell=ELL, r=2)
CACC_PLUS_R3_GAINS = ControllerGains(ka=0.2, kv=0.16, kp=0.02, hw=0.4, ell=ELL, r=3)

VARIANTS = ("cacc-stable", "cacc-unstable", "caccplus-1", "caccplus-2")


def _vehicle(gains: ControllerGains, d: float, tau: float = TAU0) -> VehicleConfig:
    return VehicleConfig(gains, SpacingPolicy(d, gains.hw), PlantParams(tau, TAU0))


def build_paper_scenario(
    variant: str,
    duration: float = 150.0,
    step_size: float = DEFAULT_STEP,
    lead: LeadProfile | None = None,
    n_followers: int = N_FOLLOWERS,
) -> Scenario:
    """Twelve followers at 25 m/s, worst-case lag, sinusoidal lead disturbance.

    ``caccplus-1``: vehicle 1 single-predecessor, vehicle 2 two predecessors,
    the rest three predecessors with d = 2.5 m. ``caccplus-2``: vehicles 1
    and 2 single-predecessor, the rest as in ``caccplus-1``.
    """
    if variant == "cacc-stable":
        vehicles = [_vehicle(CACC_GAINS, D_CACC)] * n_followers
    elif variant == "cacc-unstable":
        vehicles = [_vehicle(CACC_UNSTABLE_GAINS, D_CACC)] * n_followers
    elif variant == "caccplus-1":
        vehicles = [_vehicle(CACC_GAINS, D_CACC), _vehicle(CACC_PLUS_R2_GAINS, D_CACC)]
        vehicles += [_vehicle(CACC_PLUS_R3_GAINS, D_CACC_PLUS)] * (n_followers - 2)
    elif variant == "caccplus-2":
        vehicles = [_vehicle(CACC_GAINS, D_CACC)] * 2
        vehicles += [_vehicle(CACC_PLUS_R3_GAINS, D_CACC_PLUS)] * (n_followers - 2)
    else:
        raise ConfigError(f"unknown built-in variant {variant!r}; expected one of {VARIANTS}")
    if len(vehicles) != n_followers:
        raise ConfigError(f"variant {variant} needs at least 3 followers")
    return Scenario(
        n_followers=n_followers,
        cruise_speed=CRUISE_SPEED,
        vehicles=tuple(vehicles),
        lead=lead if lead is not None else LeadProfile(),
        duration=duration,
        step_size=step_size,
        name=variant,
    )
