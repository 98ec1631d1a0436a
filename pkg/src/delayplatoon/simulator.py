"""Fixed-step simulation of a platoon with delayed V2V information.

Vehicle 0 is the lead; it follows a prescribed acceleration profile.
Followers 1..N obey x'' = a, tau a' + a = u with either the single
predecessor law or the r-predecessor law. The closed loop is a linear
delay differential equation

    s'(t) = A s(t) + sum_D B_D s(t - D h) + g(t)

integrated with classical RK4. Delays must be whole multiples of the step;
delayed values at half steps come from cubic Hermite interpolation of the
stored states and derivatives, which keeps the scheme fourth order. Steps
containing a kink of the lead profile (or of its delayed copies) are split
at the kink.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientHistoryError, SimulationBlowupError
from .model import ControllerGains, PlantParams, SpacingPolicy, VehicleState

LOG = logging.getLogger(__name__)

BLOWUP_THRESHOLD = 1e9
DEFAULT_STEP = 1e-3
_GRID_TOL = 1e-9


# -- scenario ----------------------------------------------------------------


@dataclass(frozen=True)
class LeadProfile:
    """Lead-vehicle acceleration a0(t).

    ``paper-sine`` is amplitude*sin(frequency*(t - start_time)) on the open
    interval (start_time, end_time) and zero elsewhere; ``custom-table``
    interpolates ``table`` (pairs of time, acceleration) linearly and is zero
    outside it. Times before zero always give zero (steady cruise).
    """

    kind: str = "paper-sine"
    amplitude: float = 0.5
    frequency: float = 0.1
    start_time: float = 10.0
    end_time: float = 10.0 + 20.0 * math.pi
    table: tuple = ()

    KINDS = ("paper-sine", "zero", "custom-table")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ConfigError(f"unknown lead profile kind {self.kind!r}; expected one of {self.KINDS}")
        if self.kind == "paper-sine" and not self.end_time > self.start_time:
            raise ConfigError("lead profile end_time must follow start_time")
        if self.kind == "custom-table":
            if len(self.table) < 2:
                raise ConfigError("custom-table lead profile needs at least two (t, a) rows")
            ts = [row[0] for row in self.table]
            if any(b <= a for a, b in zip(ts, ts[1:])):
                raise ConfigError("custom-table times must be strictly increasing")
            object.__setattr__(self, "table", tuple((float(t), float(a)) for t, a in self.table))

    @classmethod
    def zero(cls) -> "LeadProfile":
        return cls(kind="zero")

    @property
    def onset(self) -> float:
        """Time the disturbance starts acting (0 for the zero profile)."""
        if self.kind == "paper-sine":
            return self.start_time
        if self.kind == "custom-table":
            return max(self.table[0][0], 0.0)
        return 0.0

    def breakpoints(self) -> tuple:
        """Times where a0(t) is not smooth; the integrator steps onto them."""
        if self.kind == "paper-sine":
            return tuple(b for b in (self.start_time, self.end_time) if math.isfinite(b))
        if self.kind == "custom-table":
            return tuple(t for t, _ in self.table)
        return ()

    def acceleration(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "zero":
            out = np.zeros_like(t)
        elif self.kind == "paper-sine":
            active = (t > self.start_time) & (t < self.end_time)
            out = np.where(active, self.amplitude * np.sin(self.frequency * (t - self.start_time)), 0.0)
        else:
            ts, acc = np.array(self.table).T
            out = np.interp(t, ts, acc, left=0.0, right=0.0)
            out = np.where((t < ts[0]) | (t > ts[-1]), 0.0, out)
        return np.where(t < 0, 0.0, out)


@dataclass(frozen=True)
class VehicleConfig:
    gains: ControllerGains
    policy: SpacingPolicy
    plant: PlantParams

    def __post_init__(self):
        if not math.isclose(self.gains.hw, self.policy.hw, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(f"gains.hw={self.gains.hw} disagrees with policy.hw={self.policy.hw}")


@dataclass(frozen=True)
class Scenario:
    n_followers: int
    cruise_speed: float
    vehicles: tuple
    lead: LeadProfile = field(default_factory=LeadProfile)
    duration: float = 150.0
    step_size: float = DEFAULT_STEP
    settle_time: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "vehicles", tuple(self.vehicles))
        self.validate()

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.step_size))

    def delay_steps(self, ell: float) -> int:
        return int(round(ell / self.step_size))

    def validate(self):
        if self.n_followers < 1:
            raise ConfigError("platoon needs at least one follower")
        if len(self.vehicles) != self.n_followers:
            raise ConfigError(f"{len(self.vehicles)} vehicle configs for {self.n_followers} followers")
        if not self.step_size > 0:
            raise ConfigError(f"step size must be positive, got {self.step_size}")
        if not self.duration > 0:
            raise ConfigError(f"duration must be positive, got {self.duration}")
        if abs(self.n_steps * self.step_size - self.duration) > _GRID_TOL * max(1.0, self.duration):
            raise ConfigError("duration must be a whole number of steps")
        if self.cruise_speed < 0:
            raise ConfigError("cruise speed must be non-negative")
        for i, veh in enumerate(self.vehicles, start=1):
            if not isinstance(veh, VehicleConfig):
                raise ConfigError(f"vehicle {i} is not a VehicleConfig")
            ell = veh.gains.ell
            steps = ell / self.step_size
            if abs(steps - round(steps)) > 1e-6:
                raise ConfigError(
                    f"vehicle {i}: delay {ell} is not a whole multiple of the step {self.step_size}"
                )
            if veh.gains.r > i:
                raise ConfigError(f"vehicle {i} cannot use r={veh.gains.r} predecessors")

    def initial_positions(self) -> np.ndarray:
        """Lead at 0, each follower at its zero-error gap d + hw*v behind."""
        gaps = [veh.policy.d + veh.policy.hw * self.cruise_speed for veh in self.vehicles]
        return -np.concatenate([[0.0], np.cumsum(gaps)])


# -- histories and control laws ----------------------------------------------


class History:
    """Uniformly sampled positions, velocities and accelerations of vehicles 0..N.

    Reads between samples use cubic Hermite interpolation for position and
    velocity and linear interpolation for acceleration. With ``cruise_speed``
    set, times before the first sample read as steady cruise (constant speed,
    zero acceleration); otherwise they raise :class:`InsufficientHistoryError`.
    """

    def __init__(self, times, x, v, a, cruise_speed: float | None = None):
        self.times = np.asarray(times, dtype=float)
        self.x = np.asarray(x, dtype=float)
        self.v = np.asarray(v, dtype=float)
        self.a = np.asarray(a, dtype=float)
        self.cruise_speed = cruise_speed
        self.step = float(self.times[1] - self.times[0]) if len(self.times) > 1 else 1.0

    def state(self, j: int, t: float) -> VehicleState:
        t0, t_end = self.times[0], self.times[-1]
        tol = _GRID_TOL * self.step
        if t < t0 - tol:
            if self.cruise_speed is None:
                raise InsufficientHistoryError(f"t={t} precedes history start {t0}")
            return VehicleState(self.x[0, j] + self.cruise_speed * (t - t0), self.cruise_speed, 0.0)
        if t > t_end + tol:
            raise InsufficientHistoryError(f"t={t} beyond history end {t_end}")
        pos = (t - t0) / self.step
        k = int(round(pos))
        if abs(pos - k) * self.step <= tol:
            return VehicleState(self.x[k, j], self.v[k, j], self.a[k, j])
        k = min(int(math.floor(pos)), len(self.times) - 2)
        theta = pos - k
        h = self.step

        def hermite(y0, y1, d0, d1):
            h00 = 2 * theta**3 - 3 * theta**2 + 1
            h10 = theta**3 - 2 * theta**2 + theta
            h01 = -2 * theta**3 + 3 * theta**2
            h11 = theta**3 - theta**2
            return h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1

        xs, vs, acc = self.x[:, j], self.v[:, j], self.a[:, j]
        return VehicleState(
            hermite(xs[k], xs[k + 1], vs[k], vs[k + 1]),
            hermite(vs[k], vs[k + 1], acc[k], acc[k + 1]),
            (1 - theta) * acc[k] + theta * acc[k + 1],
        )


def control_input_cacc(i: int, history: History, g: ControllerGains, policy: SpacingPolicy, t: float) -> float:
    """Single-predecessor law: only the predecessor acceleration is delayed."""
    me = history.state(i, t)
    pred = history.state(i - 1, t)
    pred_delayed = history.state(i - 1, t - g.ell)
    delta = me.x - pred.x + policy.d + policy.hw * me.v
    return g.ka * pred_delayed.a - g.kv * (me.v - pred.v) - g.kp * delta


def control_input_cacc_plus(i: int, history: History, g: ControllerGains, policy: SpacingPolicy, t: float) -> float:
    """r-predecessor law; predecessors q >= 2 contribute delayed a, v and x."""
    if i < g.r:
        raise ConfigError(f"vehicle {i} has fewer than r={g.r} predecessors")
    u = control_input_cacc(i, history, g, policy, t)
    me = history.state(i, t)
    for q in range(2, g.r + 1):
        other = history.state(i - q, t - g.ell)
        u += (
            g.ka * other.a
            - g.kv * (me.v - other.v)
            - g.kp * (me.x - other.x + q * policy.d + q * policy.hw * me.v)
        )
    return u


# -- trace -------------------------------------------------------------------


@dataclass
class SimTrace:
    """Time series for vehicles 0..N (column 0 is the lead).

    ``u[:, 0]`` holds the prescribed lead acceleration and ``delta[:, 0]``
    is identically zero since the lead has no predecessor.
    """

    times: np.ndarray
    x: np.ndarray
    v: np.ndarray
    a: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    scenario: Scenario

    @property
    def n_followers(self) -> int:
        return self.x.shape[1] - 1

    def history(self) -> History:
        return History(self.times, self.x, self.v, self.a, cruise_speed=self.scenario.cruise_speed)

    def _index_at(self, t: float) -> int:
        return int(np.clip(np.searchsorted(self.times, t - _GRID_TOL, side="left"), 0, len(self.times) - 1))

    def sup_abs_delta(self, settle_time: float = 0.0, baseline_time: float | None = None) -> np.ndarray:
        """sup_t |delta_i| over t >= settle_time for followers 1..N.

        With ``baseline_time`` the value delta_i(baseline_time) is subtracted
        first, which removes steady offsets of the multi-predecessor law.
        """
        start = self._index_at(settle_time)
        d = self.delta[start:, 1:]
        if baseline_time is not None:
            d = d - self.delta[self._index_at(baseline_time), 1:]
        return np.max(np.abs(d), axis=0)

    def ratios(self, settle_time: float = 0.0, baseline_time: float | None = None) -> np.ndarray:
        """sup|delta_i| / sup|delta_{i-1}| for i = 2..N (entry k is vehicle k+2)."""
        sups = self.sup_abs_delta(settle_time, baseline_time)
        with np.errstate(divide="ignore", invalid="ignore"):
            return sups[1:] / sups[:-1]

    def platoon_length(self) -> np.ndarray:
        return self.x[:, 0] - self.x[:, -1]

    def front_gaps(self) -> np.ndarray:
        return self.x[:, :-1] - self.x[:, 1:]

    def min_front_gap(self) -> np.ndarray:
        return np.min(self.front_gaps(), axis=0)

    def metrics(self, settle_time: float | None = None) -> dict:
        """Raw and offset-corrected sup norms and ratios, plus gap statistics."""
        if settle_time is None:
            settle_time = self.scenario.settle_time
        onset = self.scenario.lead.onset
        raw = self.sup_abs_delta(settle_time)
        corrected_start = max(settle_time, onset)
        corrected = self.sup_abs_delta(corrected_start, baseline_time=onset)
        raw_ratios = self.ratios(settle_time)
        corr_ratios = self.ratios(corrected_start, baseline_time=onset)
        length = self.platoon_length()
        return {
            "scenario": self.scenario.name,
            "settle_time": settle_time,
            "baseline_time": onset,
            "sup_abs_delta": raw.tolist(),
            "ratios": raw_ratios.tolist(),
            "max_ratio": float(np.max(raw_ratios)) if raw_ratios.size else None,
            "sup_abs_delta_corrected": corrected.tolist(),
            "ratios_corrected": corr_ratios.tolist(),
            "max_ratio_corrected": float(np.max(corr_ratios)) if corr_ratios.size else None,
            "min_front_gap": self.min_front_gap().tolist(),
            "platoon_length_initial": float(length[0]),
            "platoon_length_min": float(np.min(length)),
            "platoon_length_max": float(np.max(length)),
            "platoon_length_final": float(length[-1]),
        }


# -- integrator --------------------------------------------------------------


class _LinearModel:
    """Closed-loop matrices for the scenario's control laws."""

    def __init__(self, scenario: Scenario):
        n = scenario.n_followers
        m = n + 1
        self.m = m
        size = 3 * m
        ix = lambda j: j  # noqa: E731
        iv = lambda j: m + j  # noqa: E731
        ia = lambda j: 2 * m + j  # noqa: E731

        K = np.zeros((m, size))
        Kd: dict = {}
        c = np.zeros(m)
        for i, veh in enumerate(scenario.vehicles, start=1):
            g, d, hw = veh.gains, veh.policy.d, veh.policy.hw
            D = scenario.delay_steps(g.ell)
            Kdel = Kd.setdefault(D, np.zeros((m, size)))
            for q in range(1, g.r + 1):
                Kdel[i, ia(i - q)] += g.ka
                K[i, iv(i)] -= g.kv
                K[i, ix(i)] -= g.kp
                K[i, iv(i)] -= g.kp * q * hw
                c[i] -= g.kp * q * d
                if q == 1:
                    K[i, iv(i - 1)] += g.kv
                    K[i, ix(i - 1)] += g.kp
                else:
                    Kdel[i, iv(i - q)] += g.kv
                    Kdel[i, ix(i - q)] += g.kp

        # the lead acceleration is injected from its profile, never read from state
        self.lead_now = K[:, ia(0)].copy()
        K[:, ia(0)] = 0.0
        self.lead_del = {}
        for D, Kdel in Kd.items():
            self.lead_del[D] = Kdel[:, ia(0)].copy()
            Kdel[:, ia(0)] = 0.0
        self.K, self.Kd, self.c = K, Kd, c

        inv_tau = np.zeros(m)
        inv_tau[1:] = [1.0 / veh.plant.tau for veh in scenario.vehicles]
        A = np.zeros((size, size))
        A[0:m, m:2 * m] = np.eye(m)
        for j in range(1, m):
            A[iv(j), ia(j)] = 1.0
        A[2 * m:, :] = inv_tau[:, None] * K
        A[2 * m:, 2 * m:] -= np.diag(inv_tau)
        self.A = A
        self.B = {D: np.vstack([np.zeros((2 * m, size)), inv_tau[:, None] * Kdel]) for D, Kdel in Kd.items()}
        self.inv_tau = inv_tau

    def control(self, S: np.ndarray, delayed: dict, lead_now: np.ndarray, lead_delayed: dict) -> np.ndarray:
        """u for stacked states S (rows), delayed states per delay, lead accelerations."""
        u = S @ self.K.T + self.c + lead_now[:, None] * self.lead_now
        for D, Kdel in self.Kd.items():
            u = u + delayed[D] @ Kdel.T + lead_delayed[D][:, None] * self.lead_del[D]
        return u


def simulate(s: Scenario) -> SimTrace:
    """Integrate the closed-loop platoon over ``s.duration``."""
    s.validate()
    model = _LinearModel(s)
    m = model.m
    size = 3 * m
    h = s.step_size
    n = s.n_steps
    delays = sorted(model.B)
    pad = max(delays) if delays else 0
    V = s.cruise_speed

    # states and derivatives; rows 0..pad-1 are the steady-cruise prehistory
    H = np.empty((pad + n + 1, size))
    F = np.empty_like(H)
    x_init = s.initial_positions()
    pre_t = (np.arange(-pad, 1) * h)[:, None]
    H[: pad + 1, 0:m] = x_init + V * pre_t
    H[: pad + 1, m:2 * m] = V
    H[: pad + 1, 2 * m:] = 0.0
    F[: pad + 1, 0:m] = V
    F[: pad + 1, m:] = 0.0

    # lead acceleration on the half-step grid, from -pad*h to the horizon
    half_t = (np.arange(-2 * pad, 2 * n + 1)) * (h / 2)
    a0_half = s.lead.acceleration(half_t)
    a0_idx = lambda k2: k2 + 2 * pad  # noqa: E731  (k2 counts half steps)

    A = model.A
    Bs = [(D, model.B[D]) for D in delays]
    inv_tau = model.inv_tau
    const = np.zeros(size)
    const[2 * m:] = inv_tau * model.c
    lead_now = np.zeros(size)
    lead_now[2 * m:] = inv_tau * model.lead_now
    lead_now[m] += 1.0  # v0' = a0
    lead_del = {D: np.concatenate([np.zeros(2 * m), inv_tau * model.lead_del[D]]) for D in delays}
    merged = [D for D in delays if D == 0]
    if merged:
        A = A + model.B[0]
        Bs = [(D, B) for D, B in Bs if D != 0]

    def forcing(k2: int) -> np.ndarray:
        g = const + a0_half[a0_idx(k2)] * lead_now
        for D, _ in Bs:
            g = g + a0_half[a0_idx(k2 - 2 * D)] * lead_del[D]
        if merged:
            g = g + a0_half[a0_idx(k2)] * lead_del[0]
        return g

    # B @ history rows, cached per delay so each stage costs one combination
    BH = {D: H[: pad + 1] @ B.T for D, B in Bs}
    BF = {D: F[: pad + 1] @ B.T for D, B in Bs}
    for D in BH:
        BH[D] = np.concatenate([BH[D], np.empty((n, size))])
        BF[D] = np.concatenate([BF[D], np.empty((n, size))])

    # at t = 0 the prehistory derivative is the left limit; Hermite reads of
    # the last prehistory interval must use it rather than f(0+)
    bf_left0 = {D: BF[D][pad].copy() for D in BF}

    # interior breakpoint samples per history row: row -> [(theta, state, deriv)]
    dense: dict = {}

    def delayed_at(D: int, t: float) -> np.ndarray:
        # B_D s(t) by cubic Hermite between stored samples
        B = model.B[D]
        pos = t / h
        j = int(math.floor(pos + 1e-9))
        theta = pos - j
        row = pad + j
        knots = [(0.0, BH[D][row], BF[D][row])]
        for th, y, f in dense.get(row, ()):
            knots.append((th, B @ y, B @ f))
        d1 = bf_left0[D] if row + 1 == pad else BF[D][row + 1]
        knots.append((1.0, BH[D][row + 1], d1))
        for (ta, ya, fa), (tb, yb, fb) in zip(knots, knots[1:]):
            if theta <= tb or tb == 1.0:
                break
        span = (tb - ta) * h
        u = (theta - ta) / (tb - ta)
        u2, u3 = u * u, u**3
        return (
            (2 * u3 - 3 * u2 + 1) * ya
            + (u3 - 2 * u2 + u) * span * fa
            + (-2 * u3 + 3 * u2) * yb
            + (u3 - u2) * span * fb
        )

    def lead_acc(t: float) -> float:
        return float(s.lead.acceleration(t))

    def rhs(t: float, y: np.ndarray) -> np.ndarray:
        out = A @ y + const + lead_acc(t) * lead_now
        for D, _ in Bs:
            out = out + delayed_at(D, t - D * h) + lead_acc(t - D * h) * lead_del[D]
        if merged:
            out = out + lead_acc(t) * lead_del[0]
        return out

    # steps whose interior contains a kink of a0(t) or of a delayed copy of it
    split_steps: dict = {}
    for b in s.lead.breakpoints():
        for shift in {m_hop * D for D in {0, *model.Kd} for m_hop in range(5)}:
            tb = b + shift * h
            pos = tb / h
            k = int(math.floor(pos))
            if 0 <= k < n and pos - k > 1e-9 and k + 1 - pos > 1e-9:
                split_steps.setdefault(k, set()).add(tb)

    ia0 = 2 * m
    state = H[pad].copy()
    state[ia0] = a0_half[a0_idx(0)]
    H[pad] = state
    f_now = None
    for k in range(n):
        row = pad + k
        if f_now is None:
            f_now = A @ state + forcing(2 * k)
            for D, B in Bs:
                f_now += BH[D][row - D]
            F[row] = f_now
            for D, B in Bs:
                BF[D][row] = B @ f_now
        del0 = del_half = del1 = 0.0
        for D, _ in Bs:
            j = row - D
            del0 = del0 + BH[D][j]
            del1 = del1 + BH[D][j + 1]
            bf_right = bf_left0[D] if j + 1 == pad else BF[D][j + 1]
            del_half = del_half + 0.5 * (BH[D][j] + BH[D][j + 1]) + (h / 8.0) * (BF[D][j] - bf_right)
        g_end = forcing(2 * k + 2)
        if k in split_steps or any(row - D in dense for D, _ in Bs):
            marks = [k * h, *sorted(split_steps.get(k, ())), (k + 1) * h]
            for ta, tb in zip(marks, marks[1:]):
                hs = tb - ta
                k1 = rhs(ta, state)
                if ta > k * h:
                    dense.setdefault(row, []).append(((ta - k * h) / h, state.copy(), k1))
                k2 = rhs(ta + 0.5 * hs, state + 0.5 * hs * k1)
                k3 = rhs(ta + 0.5 * hs, state + 0.5 * hs * k2)
                k4 = rhs(tb, state + hs * k3)
                state = state + (hs / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        else:
            g_half = forcing(2 * k + 1)
            k1 = f_now
            k2 = A @ (state + 0.5 * h * k1) + g_half + del_half
            k3 = A @ (state + 0.5 * h * k2) + g_half + del_half
            k4 = A @ (state + h * k3) + g_end + del1
            state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        state[ia0] = a0_half[a0_idx(2 * k + 2)]
        if not np.all(np.abs(state) < BLOWUP_THRESHOLD):
            raise SimulationBlowupError(f"state diverged at t={(k + 1) * h:.6g} s", time=(k + 1) * h)
        H[row + 1] = state
        for D, B in Bs:
            BH[D][row + 1] = B @ state
        f_now = A @ state + g_end
        for D, _ in Bs:
            f_now += BH[D][row + 1 - D]
        F[row + 1] = f_now
        for D, B in Bs:
            BF[D][row + 1] = B @ f_now

    hist = H[pad:]
    times = np.arange(n + 1) * h
    X, Vv, Acc = hist[:, 0:m], hist[:, m:2 * m], hist[:, 2 * m:]
    lead_a = a0_half[a0_idx(2 * np.arange(n + 1))]
    delayed = {D: H[pad - D: pad - D + n + 1] for D in model.Kd}
    lead_delayed = {D: a0_half[a0_idx(2 * np.arange(n + 1) - 2 * D)] for D in model.Kd}
    U = model.control(hist, delayed, lead_a, lead_delayed)
    U[:, 0] = lead_a
    delta = np.zeros_like(X)
    d = np.array([veh.policy.d for veh in s.vehicles])
    hw = np.array([veh.policy.hw for veh in s.vehicles])
    delta[:, 1:] = X[:, 1:] - X[:, :-1] + d + hw * Vv[:, 1:]
    LOG.debug("simulated %s: %d steps of %g s", s.name, n, h)
    return SimTrace(times=times, x=X, v=Vv, a=Acc, u=U, delta=delta, scenario=s)
