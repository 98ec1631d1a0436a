"""JSON reports/configs and CSV time series.

Structured files are JSON with a ``schema_version`` field and numbers
rounded to 12 significant digits. All writes go through a temporary file
in the target directory followed by an atomic rename.
"""
from __future__ import annotations

import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .frequency import InstabilityWitness, StabilityReport
from .model import ControllerGains, PlantParams, SpacingPolicy
from .simulator import LeadProfile, Scenario, SimTrace, VehicleConfig
from .synthesis import FeasibleRegion, SynthesisResult

SCHEMA_VERSION = 1
SIG_DIGITS = 12


def round_sig(value):
    """Recursively round floats to 12 significant digits (lists/tuples become lists)."""
    if isinstance(value, bool) or value is None or isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return value
        return float(f"{value:.{SIG_DIGITS}g}")
    if isinstance(value, dict):
        return {str(k): round_sig(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [round_sig(v) for v in value]
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(payload: dict) -> str:
    body = dict(payload)
    body.setdefault("schema_version", SCHEMA_VERSION)
    return json.dumps(round_sig(body), indent=2, sort_keys=True) + "\n"


def atomic_write_text(path, text: str) -> Path:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_json(path, payload: dict) -> Path:
    return atomic_write_text(path, dumps(payload))


def read_json(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object at top level")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{path}: unsupported schema_version {version!r}")
    return data


def _fmt(x) -> str:
    return f"{float(x):.{SIG_DIGITS}g}"


def rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else _fmt(v) for v in row) + "\n")
    return buf.getvalue()


# -- per-type conversion -----------------------------------------------------


def _require(data: dict, *keys):
    missing = [k for k in keys if k not in data]
    if missing:
        raise ConfigError(f"missing field(s): {', '.join(missing)}")


def gains_to_dict(g: ControllerGains) -> dict:
    return {"ka": g.ka, "kv": g.kv, "kp": g.kp, "hw": g.hw, "ell": g.ell, "r": g.r}


def gains_from_dict(d: dict) -> ControllerGains:
    _require(d, "ka", "kv", "kp", "hw")
    return ControllerGains(
        ka=float(d["ka"]), kv=float(d["kv"]), kp=float(d["kp"]), hw=float(d["hw"]),
        ell=float(d.get("ell", 0.0)), r=d.get("r", 1),
    )


def lead_to_dict(p: LeadProfile) -> dict:
    out = {"kind": p.kind}
    if p.kind == "paper-sine":
        out.update(amplitude=p.amplitude, frequency=p.frequency, start_time=p.start_time, end_time=p.end_time)
    elif p.kind == "custom-table":
        out["table"] = [list(row) for row in p.table]
    return out


def lead_from_dict(d: dict) -> LeadProfile:
    kind = d.get("kind", "paper-sine")
    if kind == "custom-table":
        return LeadProfile(kind=kind, table=tuple(tuple(row) for row in d.get("table", ())))
    if kind == "zero":
        return LeadProfile.zero()
    defaults = LeadProfile()
    return LeadProfile(
        kind=kind,
        amplitude=float(d.get("amplitude", defaults.amplitude)),
        frequency=float(d.get("frequency", defaults.frequency)),
        start_time=float(d.get("start_time", defaults.start_time)),
        end_time=float(d.get("end_time", defaults.end_time)),
    )


def vehicle_to_dict(v: VehicleConfig) -> dict:
    return {
        "gains": gains_to_dict(v.gains),
        "d": v.policy.d,
        "tau": v.plant.tau,
        "tau0": v.plant.tau0,
    }


def vehicle_from_dict(d: dict) -> VehicleConfig:
    _require(d, "gains", "d")
    gains = gains_from_dict(d["gains"])
    tau0 = float(d.get("tau0", d.get("tau", 0.5)))
    tau = float(d.get("tau", tau0))
    return VehicleConfig(gains, SpacingPolicy(float(d["d"]), gains.hw), PlantParams(tau, tau0))


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "kind": "scenario",
        "name": s.name,
        "n_followers": s.n_followers,
        "cruise_speed": s.cruise_speed,
        "duration": s.duration,
        "step_size": s.step_size,
        "settle_time": s.settle_time,
        "lead": lead_to_dict(s.lead),
        "vehicles": [vehicle_to_dict(v) for v in s.vehicles],
    }


def scenario_from_dict(d: dict) -> Scenario:
    _require(d, "n_followers", "cruise_speed", "vehicles")
    return Scenario(
        n_followers=int(d["n_followers"]),
        cruise_speed=float(d["cruise_speed"]),
        vehicles=tuple(vehicle_from_dict(v) for v in d["vehicles"]),
        lead=lead_from_dict(d.get("lead", {})),
        duration=float(d.get("duration", 150.0)),
        step_size=float(d.get("step_size", 1e-3)),
        settle_time=float(d.get("settle_time", 0.0)),
        name=str(d.get("name", "custom")),
    )


def region_to_dict(r: FeasibleRegion) -> dict:
    return {
        "a1": r.a1, "b1": r.b1, "a2": r.a2, "b2": r.b2,
        "vertex_kv": r.vertex_kv, "vertex_kp": r.vertex_kp, "non_empty": r.non_empty,
        "ka": r.ka, "hw": r.hw, "tau0": r.tau0, "ell": r.ell,
    }


def region_from_dict(d: dict) -> FeasibleRegion:
    return FeasibleRegion(**{k: (bool(v) if k == "non_empty" else float(v)) for k, v in d.items()})


def report_to_dict(rep: StabilityReport) -> dict:
    return {
        "kind": "stability_report",
        "internally_stable": rep.internally_stable,
        "string_stable": rep.string_stable,
        "robust": rep.robust,
        "peak_magnitude": rep.peak_magnitude,
        "peak_omega": rep.peak_omega,
        "positive_peak_magnitude": rep.positive_peak_magnitude,
        "worst_tau": rep.worst_tau,
        "per_branch_peaks": [[q, p] for q, p in rep.per_branch_peaks],
        "tolerance": rep.tolerance,
        "tau0": rep.tau0,
        "tau_grid_points": rep.tau_grid_points,
        "grid_points": rep.grid_points,
        "omega_max": rep.omega_max,
        "refine_tol": rep.refine_tol,
        "r": rep.r,
        "sum_of_norms": rep.sum_of_norms,
    }


def report_from_dict(d: dict) -> StabilityReport:
    fields = dict(d)
    for key in ("kind", "robust", "schema_version"):
        fields.pop(key, None)
    fields["per_branch_peaks"] = tuple((int(q), float(p)) for q, p in fields.get("per_branch_peaks", ()))
    return StabilityReport(**fields)


def synthesis_to_dict(res: SynthesisResult) -> dict:
    return {
        "kind": "synthesis_result",
        "hw_lower_bound": res.hw_lower_bound,
        "hw_chosen": res.hw_chosen,
        "gains": gains_to_dict(res.gains),
        "region": region_to_dict(res.region),
        "region_is_scaled": res.barred,
        "certification": report_to_dict(res.certification),
        "tau0": res.tau0,
        "eta": res.eta,
        "active_branch": res.active_branch,
        "tolerances": dict(res.tolerances),
    }


def synthesis_from_dict(d: dict) -> SynthesisResult:
    return SynthesisResult(
        hw_lower_bound=float(d["hw_lower_bound"]),
        hw_chosen=float(d["hw_chosen"]),
        gains=gains_from_dict(d["gains"]),
        region=region_from_dict(d["region"]),
        certification=report_from_dict(d["certification"]),
        tau0=float(d["tau0"]),
        eta=float(d["eta"]),
        active_branch=d.get("active_branch", "lag"),
        tolerances=dict(d.get("tolerances", {})),
    )


def witness_to_dict(w: InstabilityWitness) -> dict:
    return {
        "kind": "instability_witness",
        "omega_hat": w.omega_hat,
        "tau_witness": w.tau_witness,
        "magnitude": w.magnitude,
        "harmonic_index": w.harmonic_index,
        "diagnostics": {k: (list(v) if isinstance(v, tuple) else v) for k, v in w.diagnostics.items()},
    }


def witness_from_dict(d: dict) -> InstabilityWitness:
    return InstabilityWitness(
        omega_hat=float(d["omega_hat"]),
        tau_witness=float(d["tau_witness"]),
        magnitude=float(d["magnitude"]),
        harmonic_index=int(d["harmonic_index"]),
        diagnostics=dict(d.get("diagnostics", {})),
    )


# -- time series -------------------------------------------------------------


def trace_csv(trace: SimTrace, stride: int = 1) -> str:
    """time, then x_i, v_i, a_i, u_i, delta_i for vehicles i = 0..N."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    m = trace.x.shape[1]
    header = ["time"]
    for i in range(m):
        header += [f"x_{i}", f"v_{i}", f"a_{i}", f"u_{i}", f"delta_{i}"]
    idx = np.arange(0, len(trace.times), stride)
    if idx[-1] != len(trace.times) - 1:
        idx = np.append(idx, len(trace.times) - 1)
    block = np.stack([trace.x, trace.v, trace.a, trace.u, trace.delta], axis=2)[idx].reshape(len(idx), -1)
    table = np.column_stack([trace.times[idx], block])
    return rows_to_csv(header, table)


def write_trace_csv(path, trace: SimTrace, stride: int = 1) -> Path:
    return atomic_write_text(path, trace_csv(trace, stride))
