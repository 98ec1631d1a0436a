"""Shared value types and elementary derived quantities."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class PlantParams:
    """First-order actuation lag ``tau`` and the upper bound ``tau0`` of its
    uncertainty interval (0, tau0]."""

    tau: float
    tau0: float

    def __post_init__(self):
        if not (self.tau0 > 0):
            raise ConfigError(f"tau0 must be positive, got {self.tau0}")
        if not (0 < self.tau <= self.tau0):
            raise ConfigError(f"tau must lie in (0, tau0={self.tau0}], got {self.tau}")

    @classmethod
    def worst_case(cls, tau0: float) -> "PlantParams":
        return cls(tau=tau0, tau0=tau0)


@dataclass(frozen=True)
class ControllerGains:
    """Gains of one vehicle's constant-time-headway law.

    ``ka`` multiplies the communicated (delayed) predecessor acceleration,
    ``kv`` the relative velocity and ``kp`` the spacing error. ``ell`` is the
    communication delay and ``r`` the number of predecessors used (1 is
    plain CACC).
    """

    ka: float
    kv: float
    kp: float
    hw: float
    ell: float = 0.0
    r: int = 1

    def __post_init__(self):
        for name in ("ka", "kv", "kp", "hw", "ell"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ConfigError(f"{name} must be finite, got {value}")
        if self.ka < 0:
            raise ConfigError(f"ka must be non-negative, got {self.ka}")
        if self.kv <= 0 or self.kp <= 0:
            raise ConfigError(f"kv and kp must be positive, got kv={self.kv}, kp={self.kp}")
        if self.hw <= 0:
            raise ConfigError(f"hw must be positive, got {self.hw}")
        if self.ell < 0:
            raise ConfigError(f"ell must be non-negative, got {self.ell}")
        if isinstance(self.r, bool) or int(self.r) != self.r or self.r < 1:
            raise ConfigError(f"r must be an integer >= 1, got {self.r}")
        object.__setattr__(self, "r", int(self.r))

    @property
    def certifiable_ka(self) -> bool:
        """Whether r*ka lies in (0, 1), the range admitting certified designs."""
        return 0 < self.r * self.ka < 1


@dataclass(frozen=True)
class SpacingPolicy:
    d: float
    hw: float

    def __post_init__(self):
        if not (self.d > 0):
            raise ConfigError(f"standstill distance d must be positive, got {self.d}")
        if not (self.hw > 0):
            raise ConfigError(f"hw must be positive, got {self.hw}")


@dataclass(frozen=True)
class VehicleState:
    x: float
    v: float
    a: float

    def __post_init__(self):
        if not all(math.isfinite(c) for c in (self.x, self.v, self.a)):
            raise ConfigError(f"vehicle state must be finite, got {self}")


def gamma(g: ControllerGains) -> float:
    """kv + hw*kp, the first-order coefficient of the CACC error denominator."""
    return g.kv + g.hw * g.kp


def gamma_r(g: ControllerGains) -> float:
    """r*kv + r(r+1)/2*hw*kp; reduces to :func:`gamma` for r = 1."""
    r = g.r
    if r == 1:
        return gamma(g)
    return r * g.kv + 0.5 * r * (r + 1) * g.hw * g.kp


def steady_spacing(policy: SpacingPolicy, v: float) -> float:
    """Gap d + hw*v at which the spacing error vanishes."""
    if v < 0:
        raise ConfigError(f"speed must be non-negative, got {v}")
    return policy.d + policy.hw * v
