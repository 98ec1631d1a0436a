"""Frequency-domain analysis of the spacing-error propagation with delay.

The CACC error propagation is

    H1(s) = (ka s^2 e^{-ell s} + kv s + kp) / (tau s^3 + s^2 + gamma s + kp)

and the r-predecessor law splits into branches H_q sharing the denominator
tau s^3 + s^2 + gamma_r s + r kp. The delay is evaluated exactly on the
imaginary axis; nothing here uses a rational approximation of e^{-ell s}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ConfigError, DegenerateInputError, NotApplicableError, SearchExhaustedError
from .model import ControllerGains, gamma, gamma_r

DEFAULT_GRID_POINTS = 20_000
DEFAULT_REFINE_TOL = 1e-8
DEFAULT_TAU_GRID_POINTS = 50
STRING_STABILITY_TOL = 1e-9
OMEGA_MIN = 1e-4
OMEGA_CAP = 1e8
FALSIFIER_K_CAP = 10**6

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class FrequencyResponsePoint:
    omega: float
    magnitude: float
    real: float
    imag: float

    @classmethod
    def from_complex(cls, omega: float, value: complex) -> "FrequencyResponsePoint":
        return cls(float(omega), float(abs(value)), float(value.real), float(value.imag))


@dataclass(frozen=True)
class SupNormEstimate:
    """Result of a frequency sweep.

    ``omega``/``magnitude`` is the overall maximum (DC included); the
    ``positive_*`` pair is the maximum restricted to omega > 0, which is what
    string-stability verdicts look at since the DC gain is exactly one.
    """

    omega: float
    magnitude: float
    positive_omega: float
    positive_magnitude: float
    grid_points: int
    omega_max: float
    refine_tol: float

    def __iter__(self):
        # (peak_omega, peak_magnitude) unpacking
        yield self.omega
        yield self.magnitude


@dataclass(frozen=True)
class StabilityReport:
    internally_stable: bool
    string_stable: bool
    peak_magnitude: float
    peak_omega: float
    worst_tau: float
    per_branch_peaks: tuple = ()
    positive_peak_magnitude: float = float("nan")
    tolerance: float = STRING_STABILITY_TOL
    tau0: float = float("nan")
    tau_grid_points: int = 0
    grid_points: int = 0
    omega_max: float = float("nan")
    refine_tol: float = float("nan")
    r: int = 1
    sum_of_norms: float | None = None

    @property
    def robust(self) -> bool:
        """Both conditions of robust string stability."""
        return self.internally_stable and self.string_stable


@dataclass(frozen=True)
class InstabilityWitness:
    omega_hat: float
    tau_witness: float
    magnitude: float
    harmonic_index: int
    diagnostics: dict = field(default_factory=dict, compare=False)


# -- transfer function evaluation -------------------------------------------


def _check_omega_tau(omega, tau):
    if np.any(np.asarray(omega) < 0):
        raise ConfigError("omega must be non-negative")
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")


def _denominator(tau: float, gam: float, kp_total: float, w: np.ndarray) -> np.ndarray:
    # D(jw) = kp_total - w^2 + j w (gam - tau w^2)
    return (kp_total - w * w) + 1j * w * (gam - tau * w * w)


def _ratio(num, den):
    if np.any(den == 0):
        raise DegenerateInputError("denominator vanishes on the imaginary axis (system not internally stable)")
    return num / den


def h1_response(g: ControllerGains, tau: float, omega) -> np.ndarray:
    """Complex H1(j omega) for an array of frequencies (r is ignored)."""
    w = np.asarray(omega, dtype=float)
    _check_omega_tau(w, tau)
    wl = w * g.ell
    num = (g.kp - g.ka * w * w * np.cos(wl)) + 1j * w * (g.ka * w * np.sin(wl) + g.kv)
    den = _denominator(tau, gamma(g), g.kp, w)
    return _ratio(num, den)


def hq_response(g: ControllerGains, q: int, tau: float, omega) -> np.ndarray:
    """Complex H_q(j omega) of the r-predecessor law, vectorised in omega."""
    if not 1 <= q <= g.r:
        raise ConfigError(f"branch q={q} outside 1..{g.r}")
    w = np.asarray(omega, dtype=float)
    _check_omega_tau(w, tau)
    delay = np.exp(-1j * w * g.ell)
    s2 = -w * w
    if q == 1:
        num = g.ka * s2 * delay + 1j * w * g.kv + g.kp
    else:
        num = delay * (g.ka * s2 + 1j * w * g.kv + g.kp)
    den = _denominator(tau, gamma_r(g), g.r * g.kp, w)
    return _ratio(num, den)


def eval_H1(g: ControllerGains, tau: float, omega: float) -> FrequencyResponsePoint:
    return FrequencyResponsePoint.from_complex(omega, complex(h1_response(g, tau, float(omega))))


def eval_Hq(g: ControllerGains, q: int, tau: float, omega: float) -> FrequencyResponsePoint:
    return FrequencyResponsePoint.from_complex(omega, complex(hq_response(g, q, tau, float(omega))))


def barred_gains(g: ControllerGains) -> ControllerGains:
    """Single-predecessor gains whose H1 equals r*H_1 of the r-predecessor law.

    ka, kv, kp are scaled by r and the headway by (r+1)/2.
    """
    r = g.r
    if r == 1:
        return g
    return ControllerGains(ka=r * g.ka, kv=r * g.kv, kp=r * g.kp, hw=0.5 * (r + 1) * g.hw, ell=g.ell, r=1)


# -- sweeps ------------------------------------------------------------------


def default_omega_max(ell: float, tau0: float) -> float:
    """Upper sweep frequency resolving at least ten periods of e^{-j omega ell}."""
    candidates = [100.0 / tau0, 1000.0]
    if ell > 0:
        candidates.append(10.0 * 2.0 * math.pi / ell)
    # a vanishing delay would otherwise push the grid to overflow
    return min(max(candidates), OMEGA_CAP)


def _golden_max(f, lo: np.ndarray, hi: np.ndarray, tol: float):
    """Vectorised golden-section maximisation on independent brackets."""
    a = lo.astype(float).copy()
    b = hi.astype(float).copy()
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc = f(c)
    fd = f(d)
    while np.any(b - a > tol):
        active = (b - a) > tol
        left = active & (fc >= fd)  # keep [a, d]
        right = active & ~left
        b = np.where(left, d, b)
        a = np.where(right, c, a)
        new_c = np.where(left, b - _INV_PHI * (b - a), np.where(right, d, c))
        new_d = np.where(right, a + _INV_PHI * (b - a), np.where(left, c, d))
        fd_new = np.where(left, fc, fd)
        fc_new = np.where(right, fd, fc)
        c, d, fc, fd = new_c, new_d, fc_new, fd_new
        # one fresh evaluation per bracket: c after a left move, d after a right move
        fp = f(np.where(left, c, d))
        fc = np.where(left, fp, fc)
        fd = np.where(right, fp, fd)
    # best of the candidates seen at the end
    xs = np.stack([a, b, c, d])
    fs = np.stack([f(a), f(b), fc, fd])
    idx = np.argmax(fs, axis=0)
    cols = np.arange(xs.shape[1])
    return xs[idx, cols], fs[idx, cols]


def sup_norm_over_omega(
    evaluator: Callable,
    omega_max: float,
    grid_points: int = DEFAULT_GRID_POINTS,
    refine_tol: float = DEFAULT_REFINE_TOL,
) -> SupNormEstimate:
    """Estimate sup_omega |H(j omega)| for a vectorised magnitude ``evaluator``.

    The magnitude is sampled at omega = 0 and on a log-spaced grid over
    [1e-4, omega_max]; every grid-local maximum is then refined by
    golden-section search to a bracket narrower than ``refine_tol``. The
    result is a lower bound on the true supremum. Ties go to the smaller
    frequency.
    """
    if not omega_max > OMEGA_MIN:
        raise ConfigError(f"omega_max must exceed {OMEGA_MIN}, got {omega_max}")
    if grid_points < 1000:
        raise ConfigError(f"grid_points must be at least 1000, got {grid_points}")

    def f(w):
        w = np.asarray(w, dtype=float)
        return np.broadcast_to(np.asarray(evaluator(w), dtype=float), w.shape)

    grid = np.geomspace(OMEGA_MIN, omega_max, grid_points)
    mags = f(grid)
    dc = float(f(np.zeros(1))[0])

    n = len(grid)
    interior = np.flatnonzero((mags[1:-1] > mags[:-2]) & (mags[1:-1] >= mags[2:])) + 1
    peaks = list(interior)
    if mags[0] >= mags[1]:
        peaks.append(0)
    if mags[-1] > mags[-2]:
        peaks.append(n - 1)
    peaks = np.array(sorted(peaks), dtype=int)

    best_w = float(grid[0])
    best_m = float(mags[0])
    if peaks.size:
        lo = grid[np.maximum(peaks - 1, 0)]
        hi = grid[np.minimum(peaks + 1, n - 1)]
        ws, ms = _golden_max(f, lo, hi, refine_tol)
        # refined values never replace a better grid sample
        ms = np.maximum(ms, mags[peaks])
        ws = np.where(ms == mags[peaks], grid[peaks], ws)
        order = np.lexsort((ws, -ms))
        best_w, best_m = float(ws[order[0]]), float(ms[order[0]])
    grid_best = int(np.argmax(mags))
    if mags[grid_best] > best_m:
        best_w, best_m = float(grid[grid_best]), float(mags[grid_best])

    if dc >= best_m:
        omega, magnitude = 0.0, dc
    else:
        omega, magnitude = best_w, best_m
    return SupNormEstimate(
        omega=omega,
        magnitude=magnitude,
        positive_omega=best_w,
        positive_magnitude=best_m,
        grid_points=grid_points,
        omega_max=float(omega_max),
        refine_tol=refine_tol,
    )


def tau_grid(tau0: float, points: int = DEFAULT_TAU_GRID_POINTS) -> np.ndarray:
    """Log-spaced lag values on [tau0/1000, tau0], tau0 always included."""
    if points < 10:
        raise ConfigError(f"tau grid needs at least 10 points, got {points}")
    taus = np.geomspace(tau0 / 1000.0, tau0, points)
    taus[-1] = tau0
    return taus


def internal_stability(g: ControllerGains, tau0: float) -> bool:
    """Routh condition on tau s^3 + s^2 + gamma_r s + r kp at tau = tau0.

    The condition is monotone in tau, so tau0 covers the whole interval.
    """
    return gamma_r(g) > tau0 * g.r * g.kp


def branch_magnitude(g: ControllerGains, q: int, tau: float, scaled: bool = True) -> Callable:
    """Vectorised omega -> |H_q| (times r when ``scaled``) for fixed tau."""
    scale = g.r if scaled else 1.0
    if g.r == 1:
        return lambda w: scale * np.abs(h1_response(g, tau, w))
    return lambda w: scale * np.abs(hq_response(g, q, tau, w))


def robust_string_stability(
    g: ControllerGains,
    tau0: float,
    tau_grid_points: int = DEFAULT_TAU_GRID_POINTS,
    omega_max: float | None = None,
    grid_points: int = DEFAULT_GRID_POINTS,
    refine_tol: float = DEFAULT_REFINE_TOL,
    tolerance: float = STRING_STABILITY_TOL,
) -> StabilityReport:
    """Sweep-based robust string-stability verdict over tau in (0, tau0].

    For r = 1 the check is |H1| <= 1; for r > 1 it is the sufficient
    condition r*|H_q| <= 1 for every branch (branches q >= 2 share one
    magnitude so only q = 1, 2 are swept). The per-branch peaks reported are
    the unscaled |H_q| maxima.
    """
    if not tau0 > 0:
        raise ConfigError(f"tau0 must be positive, got {tau0}")
    if omega_max is None:
        omega_max = default_omega_max(g.ell, tau0)
    taus = tau_grid(tau0, tau_grid_points)
    branches = [1] if g.r == 1 else [1, 2]
    stable_inside = internal_stability(g, tau0)

    best = None  # (positive_magnitude, omega, tau)
    dc_peak = 0.0
    branch_peaks = {q: 0.0 for q in branches}
    worst_sum = 0.0
    for tau in taus:
        per_tau = {}
        for q in branches:
            est = sup_norm_over_omega(branch_magnitude(g, q, tau), omega_max, grid_points, refine_tol)
            per_tau[q] = est
            branch_peaks[q] = max(branch_peaks[q], est.magnitude / g.r)
            dc_peak = max(dc_peak, est.magnitude)
            cand = (est.positive_magnitude, est.positive_omega, float(tau))
            if best is None or cand[0] > best[0] or (cand[0] == best[0] and cand[1] < best[1]):
                best = cand
        if g.r > 1:
            total = (per_tau[1].magnitude + (g.r - 1) * per_tau[2].magnitude) / g.r
            worst_sum = max(worst_sum, total)

    positive_peak, peak_omega, worst_tau = best
    peak_magnitude = max(dc_peak, positive_peak)
    if peak_magnitude > positive_peak:
        peak_omega = 0.0
    return StabilityReport(
        internally_stable=stable_inside,
        string_stable=positive_peak <= 1.0 + tolerance,
        peak_magnitude=peak_magnitude,
        peak_omega=peak_omega,
        worst_tau=worst_tau,
        per_branch_peaks=tuple((q, branch_peaks[q]) for q in branches),
        positive_peak_magnitude=positive_peak,
        tolerance=tolerance,
        tau0=tau0,
        tau_grid_points=len(taus),
        grid_points=grid_points,
        omega_max=float(omega_max),
        refine_tol=refine_tol,
        r=g.r,
        sum_of_norms=worst_sum if g.r > 1 else None,
    )


def conservative_margin_check(g: ControllerGains, tau0: float) -> bool:
    """Closed-form sufficient condition for |H1| <= 1 at every tau <= tau0.

    Obtained by bounding sin(w ell) <= w ell and cos(w ell) >= 1 - (w ell)^2/2
    in |D1|^2 - |N1|^2 >= 0. Passing implies the sweep passes; failing says
    nothing. Multi-predecessor gains are checked through their barred
    single-predecessor equivalent, which also covers the undelayed q >= 2
    branches.
    """
    b = barred_gains(g)
    gam = gamma(b)
    ka, kv, kp, ell = b.ka, b.kv, b.kp, b.ell
    quartic = 1.0 - 2.0 * tau0 * gam - ka**2 - 2.0 * ka * kv * ell - ka * kp * ell**2
    constant = gam**2 - (2.0 * kp - 2.0 * ka * kp + kv**2)
    return quartic >= 0.0 and constant >= 0.0


# -- instability witness -----------------------------------------------------


def _smallest_k_with_square_above(bound: float) -> int:
    k = max(1, int(math.floor(math.sqrt(max(bound, 0.0)))))
    while k * k <= bound:
        k += 1
    while k > 1 and (k - 1) ** 2 > bound:
        k -= 1
    return k


def falsify_ka_ge_1(g: ControllerGains, tau0: float, k_cap: int = FALSIFIER_K_CAP) -> InstabilityWitness:
    """Construct (omega, tau) with |H1(j omega; tau)| > 1 for gains with ka >= 1.

    Frequencies are restricted to omega*ell = 2*pi*k so the delayed
    acceleration term is in phase. For ka > 1 the lag is set to
    gamma/omega^2; for ka = 1 integers k are scanned for a lag in (0, tau0]
    with kp*hw < tau*omega^2 < kp*hw + 2*kv.
    """
    if g.ka < 1.0:
        raise NotApplicableError(f"construction needs ka >= 1, got ka={g.ka}")
    if g.ell <= 0:
        raise NotApplicableError("construction needs a non-zero communication delay")
    if g.r != 1:
        raise NotApplicableError("construction applies to single-predecessor gains (r = 1)")
    if not tau0 > 0:
        raise ConfigError(f"tau0 must be positive, got {tau0}")
    if not internal_stability(g, tau0):
        raise NotApplicableError("gains are not internally stable at tau0; H1 is not well posed")

    gam = gamma(g)
    scale = g.ell**2 / (4.0 * math.pi**2)
    if g.ka > 1.0:
        k = _smallest_k_with_square_above(gam * scale / tau0)
        omega = 2.0 * k * math.pi / g.ell
        tau = gam / omega**2
        diagnostics = {"case": "ka>1"}
    else:
        lower = g.kp * g.hw * scale
        upper = (g.kp * g.hw + 2.0 * g.kv) * scale
        k = _smallest_k_with_square_above(lower / tau0)
        if k > k_cap:
            raise SearchExhaustedError(
                f"no integer k <= {k_cap} admits a lag in (0, tau0]",
                {"k_cap": k_cap, "lower": lower, "upper": upper, "tau0": tau0, "k_needed": k},
            )
        lo, hi = lower / k**2, upper / k**2
        centre = 0.5 * (lo + hi)  # gamma = tau omega^2, widest margin
        tau = centre if centre <= tau0 else tau0
        if not (lo < tau < hi):
            raise SearchExhaustedError(
                "interval condition not met at the first admissible k",
                {"k": k, "lo": lo, "hi": hi, "tau0": tau0},
            )
        omega = 2.0 * k * math.pi / g.ell
        diagnostics = {"case": "ka=1", "tau_interval": (lo, hi)}

    magnitude = float(abs(complex(h1_response(g, tau, omega))))
    return InstabilityWitness(
        omega_hat=omega, tau_witness=tau, magnitude=magnitude, harmonic_index=k, diagnostics=diagnostics
    )
