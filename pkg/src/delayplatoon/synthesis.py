"""Delay-dependent time-headway bounds and (kv, kp) gain selection."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import frequency
from .errors import CertificationError, ConfigError, RegionEmptyError, SingularSystemError
from .model import ControllerGains, gamma, gamma_r

DEFAULT_ETA = 0.05
HW_STRICTNESS = 1e-6
DEFAULT_KV_FRACTION = 0.9


def _check_ka(ka: float, r: int = 1):
    # ka = 0 is plain ACC and is allowed
    if not 0 <= r * ka < 1:
        label = "ka" if r == 1 else f"r*ka (r={r})"
        raise ConfigError(f"{label} must lie in [0, 1) for a string-stable design, got {r * ka}")


def hw_lower_bound_cacc(tau0: float, ell: float, ka: float) -> float:
    """max(2(tau0 + ka*ell)/(1 + ka), ell/2): headway floor for single-predecessor CACC."""
    _check_ka(ka)
    if not tau0 > 0 or ell < 0:
        raise ConfigError(f"need tau0 > 0 and ell >= 0, got tau0={tau0}, ell={ell}")
    return max(2.0 * (tau0 + ka * ell) / (1.0 + ka), 0.5 * ell)


def hw_lower_bound_cacc_plus(tau0: float, ell: float, ka: float, r: int) -> float:
    """4(tau0 + r ka ell)/((r+1)(1 + r ka)), the per-pair headway floor with r predecessors."""
    if int(r) != r or r < 1:
        raise ConfigError(f"r must be an integer >= 1, got {r}")
    _check_ka(ka, r)
    if not tau0 > 0 or ell < 0:
        raise ConfigError(f"need tau0 > 0 and ell >= 0, got tau0={tau0}, ell={ell}")
    rka = r * ka
    return 4.0 * (tau0 + rka * ell) / ((r + 1) * (1.0 + rka))


class Interval(NamedTuple):
    lower: float
    upper: float

    @property
    def empty(self) -> bool:
        return not (self.upper > 0 and self.lower <= self.upper)

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    def __contains__(self, value) -> bool:
        return not self.empty and self.lower <= value <= self.upper


@dataclass(frozen=True)
class FeasibleRegion:
    """Half-planes kv/a1 + kp/b1 >= 1 and kv/a2 + kp/b2 <= 1 in the (kv, kp) plane.

    The first comes from the low-frequency part of |D1|^2 - |N1|^2 >= 0, the
    second from the upper bound on gamma = kv + hw*kp. Their boundary lines
    meet at (vertex_kv, vertex_kp); the set is non-empty exactly when that
    vertex sits above the kv axis.
    """

    a1: float
    b1: float
    a2: float
    b2: float
    vertex_kv: float
    vertex_kp: float
    non_empty: bool
    ka: float = float("nan")
    hw: float = float("nan")
    tau0: float = float("nan")
    ell: float = float("nan")

    def contains(self, kv: float, kp: float, tol: float = 0.0) -> bool:
        return (
            kv > 0
            and kp > 0
            and kv / self.a1 + kp / self.b1 >= 1.0 - tol
            and kv / self.a2 + kp / self.b2 <= 1.0 + tol
        )

    def polygon(self) -> list:
        """Vertices of the closed feasible set in the first quadrant, counter-clockwise."""
        # each line as (p, q, c) meaning p*kv + q*kp = c
        lines = [
            (1.0, 0.0, 0.0),
            (0.0, 1.0, 0.0),
            (1.0 / self.a1, 1.0 / self.b1, 1.0),
            (1.0 / self.a2, 1.0 / self.b2, 1.0),
        ]
        eps = 1e-12
        pts = []
        for (p1, q1, c1), (p2, q2, c2) in itertools.combinations(lines, 2):
            det = p1 * q2 - p2 * q1
            if abs(det) < eps:
                continue
            kv = (c1 * q2 - c2 * q1) / det
            kp = (p1 * c2 - p2 * c1) / det
            if (
                kv >= -eps
                and kp >= -eps
                and kv / self.a1 + kp / self.b1 >= 1.0 - 1e-9
                and kv / self.a2 + kp / self.b2 <= 1.0 + 1e-9
            ):
                if not any(abs(kv - u) < 1e-12 and abs(kp - w) < 1e-12 for u, w in pts):
                    pts.append((max(kv, 0.0) + 0.0, max(kp, 0.0) + 0.0))
        if len(pts) < 3:
            return pts
        cx = sum(p[0] for p in pts) / len(pts)
        cy = sum(p[1] for p in pts) / len(pts)
        return sorted(pts, key=lambda p: np.arctan2(p[1] - cy, p[0] - cx))

    def boundary_polylines(self) -> dict:
        """Plot data: both boundary lines clipped to the axes plus the feasible polygon."""
        return {
            "s1_boundary": [(self.a1, 0.0), (0.0, self.b1)],
            "s2_boundary": [(self.a2, 0.0), (0.0, self.b2)],
            "feasible_polygon": self.polygon() if self.non_empty else [],
        }


def feasible_region(ka: float, hw: float, tau0: float, ell: float) -> FeasibleRegion:
    _check_ka(ka)
    if not hw > 0 or not tau0 > 0 or ell < 0:
        raise ConfigError(f"need hw > 0, tau0 > 0, ell >= 0; got hw={hw}, tau0={tau0}, ell={ell}")
    a1 = (1.0 - ka) / hw
    b1 = 2.0 * (1.0 - ka) / hw**2
    a2 = (1.0 - ka**2) / (2.0 * (tau0 + ka * ell))
    b2 = a2 / hw
    det = a2 * b1 - a1 * b2
    if det == 0:
        raise SingularSystemError("boundary lines of the feasible region are parallel")
    vertex_kv = a1 * a2 * (b1 - b2) / det
    vertex_kp = b1 * b2 * (a2 - a1) / det
    return FeasibleRegion(
        a1=a1, b1=b1, a2=a2, b2=b2,
        vertex_kv=vertex_kv, vertex_kp=vertex_kp,
        non_empty=a1 < a2,
        ka=ka, hw=hw, tau0=tau0, ell=ell,
    )


def kp_range_given_kv(region: FeasibleRegion, kv: float) -> Interval:
    """Admissible kp for a fixed kv; empty (not an error) when kv >= a2."""
    if not region.non_empty:
        raise RegionEmptyError("feasible region is empty")
    if not kv > 0:
        raise ConfigError(f"kv must be positive, got {kv}")
    lower = max(0.0, region.b1 * (1.0 - kv / region.a1))
    upper = region.b2 * (1.0 - kv / region.a2)
    return Interval(lower, upper)


@dataclass(frozen=True)
class SynthesisResult:
    hw_lower_bound: float
    hw_chosen: float
    gains: ControllerGains
    region: FeasibleRegion
    certification: frequency.StabilityReport
    tau0: float
    eta: float
    # "lag" when 2(tau0 + ka ell)/(1 + ka) sets the bound, "delay" when ell/2 does
    active_branch: str = "lag"
    tolerances: dict = field(default_factory=dict)

    @property
    def barred(self) -> bool:
        """Whether ``region`` is expressed in r-scaled gains and headway."""
        return self.gains.r > 1


def synthesize(
    tau0: float,
    ell: float,
    ka: float,
    r: int = 1,
    eta: float = DEFAULT_ETA,
    kv_choice: float | None = None,
    kp_choice: float | None = None,
    hw: float | None = None,
    *,
    tau_grid_points: int = frequency.DEFAULT_TAU_GRID_POINTS,
    grid_points: int = frequency.DEFAULT_GRID_POINTS,
    omega_max: float | None = None,
    refine_tol: float = frequency.DEFAULT_REFINE_TOL,
) -> SynthesisResult:
    """Pick a headway above the delay-dependent floor and gains inside the region.

    With r > 1 the design is carried out on the scaled gains r*ka, r*kv,
    r*kp and scaled headway (r+1)/2*hw, and converted back. The ell/2 floor
    is applied in both cases. ``hw`` overrides ``eta``; ``kv_choice`` and
    ``kp_choice`` are physical (unscaled) values and are validated against
    the region. The returned design is certified by a frequency sweep.
    """
    if int(r) != r or r < 1:
        raise ConfigError(f"r must be an integer >= 1, got {r}")
    r = int(r)
    _check_ka(ka, r)
    if not tau0 > 0 or ell < 0:
        raise ConfigError(f"need tau0 > 0 and ell >= 0, got tau0={tau0}, ell={ell}")
    if hw is None and not eta > 0:
        raise ConfigError(f"eta must be positive, got {eta}")

    ka_bar = r * ka
    scale = 0.5 * (r + 1)  # physical hw -> barred headway
    lag_term = 2.0 * (tau0 + ka_bar * ell) / (1.0 + ka_bar)
    bound_bar = max(lag_term, 0.5 * ell)
    active = "delay" if 0.5 * ell > lag_term else "lag"
    hw_bound = bound_bar / scale

    if hw is None:
        hw_chosen = max(bound_bar * (1.0 + eta), bound_bar + scale * HW_STRICTNESS) / scale
    else:
        hw_chosen = float(hw)
        if not hw_chosen >= hw_bound + HW_STRICTNESS:
            raise ConfigError(
                f"hw={hw_chosen} must exceed the lower bound {hw_bound:.6g} by at least {HW_STRICTNESS}"
            )
    eta_used = hw_chosen / hw_bound - 1.0

    region = feasible_region(ka_bar, hw_chosen * scale, tau0, ell)
    if not region.non_empty:
        raise RegionEmptyError(f"feasible region empty at hw={hw_chosen} (bound {hw_bound})")

    if kv_choice is None:
        kv_bar = region.a1 + DEFAULT_KV_FRACTION * (region.a2 - region.a1)
    else:
        kv_bar = r * kv_choice
    interval = kp_range_given_kv(region, kv_bar)
    if interval.empty:
        raise ConfigError(f"kv={kv_bar / r} leaves no admissible kp (interval {tuple(interval)})")
    if kp_choice is None:
        kp_bar = interval.midpoint
    else:
        kp_bar = r * kp_choice
        if kp_bar not in interval:
            raise ConfigError(
                f"kp={kp_choice} outside the admissible range "
                f"[{interval.lower / r:.6g}, {interval.upper / r:.6g}]"
            )
    if not kp_bar > 0:
        raise ConfigError("selected kp is not positive")

    gains = ControllerGains(ka=ka, kv=kv_bar / r, kp=kp_bar / r, hw=hw_chosen, ell=ell, r=r)
    report = frequency.robust_string_stability(
        gains,
        tau0,
        tau_grid_points=tau_grid_points,
        omega_max=omega_max,
        grid_points=grid_points,
        refine_tol=refine_tol,
    )
    if not report.robust:
        raise CertificationError(
            f"sweep found a violation: peak {report.positive_peak_magnitude!r} at "
            f"omega={report.peak_omega:.6g}, tau={report.worst_tau:.6g}",
            report,
        )
    return SynthesisResult(
        hw_lower_bound=hw_bound,
        hw_chosen=hw_chosen,
        gains=gains,
        region=region,
        certification=report,
        tau0=tau0,
        eta=eta_used,
        active_branch=active,
        tolerances={
            "hw_strictness": HW_STRICTNESS,
            "string_stability": report.tolerance,
            "refine_tol": refine_tol,
            "grid_points": grid_points,
            "tau_grid_points": report.tau_grid_points,
            "omega_max": report.omega_max,
        },
    )


def internal_stability_implied(result: SynthesisResult) -> bool:
    """Re-check that a synthesized design satisfies gamma_r > tau0 * r * kp.

    Headways above the floor force this automatically; a False here means the
    synthesis invariants were broken.
    """
    g = result.gains
    return gamma_r(g) > result.tau0 * g.r * g.kp and frequency.internal_stability(g, result.tau0)


def gamma_window(g: ControllerGains, tau0: float) -> tuple:
    """Return (lower, upper, gamma) where gamma = kv + hw*kp and

    lower = sqrt(2 kp (1 - ka) + kv^2), upper = (1 - ka^2)/(2 tau0 + 2 ka ell).
    Every point of the feasible region puts gamma between the two bounds.
    """
    lo = float(np.sqrt(2.0 * g.kp * (1.0 - g.ka) + g.kv**2))
    hi = (1.0 - g.ka**2) / (2.0 * tau0 + 2.0 * g.ka * g.ell)
    return lo, hi, gamma(g)
