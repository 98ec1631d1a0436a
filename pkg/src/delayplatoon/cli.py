"""Command-line entry point: ``delayplatoon <command> [options]``.

Parameter precedence is built-in defaults, then ``--config`` file, then
explicit flags, then ``--set key=value`` overrides.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import frequency, presets, serialization as ser
from .errors import (
    CertificationError,
    ConfigError,
    DegenerateInputError,
    InsufficientHistoryError,
    NotApplicableError,
    RegionEmptyError,
    SearchExhaustedError,
    SimulationBlowupError,
    SingularSystemError,
)
from .model import ControllerGains
from .simulator import simulate
from .synthesis import hw_lower_bound_cacc_plus, synthesize

log = logging.getLogger("delayplatoon")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4
EXIT_NOT_APPLICABLE = 5
EXIT_SEARCH_EXHAUSTED = 6

DEFAULTS = {
    "tau0": presets.TAU0,
    "ell": presets.ELL,
    "ka": presets.CACC_GAINS.ka,
    "kv": None,
    "kp": None,
    "hw": None,
    "r": 1,
    "eta": 0.05,
    "omega_max": None,
    "grid": frequency.DEFAULT_GRID_POINTS,
    "tau_grid": frequency.DEFAULT_TAU_GRID_POINTS,
    "refine_tol": frequency.DEFAULT_REFINE_TOL,
    "step": 1e-3,
    "duration": 150.0,
    "stride": 100,
    "variant": "cacc-stable",
    "plot_points": 400,
    "k_cap": frequency.FALSIFIER_K_CAP,
}

# flags that take part in the precedence merge (dest name -> DEFAULTS key)
_PARAM_FLAGS = (
    "tau0", "ell", "ka", "kv", "kp", "hw", "r", "eta", "omega_max", "grid",
    "tau_grid", "refine_tol", "step", "duration", "stride", "variant", "plot_points", "k_cap",
)


def _parse_set(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key = key.strip().replace("-", "_")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_params(args) -> dict:
    params = dict(DEFAULTS)
    config = {}
    if args.config:
        try:
            config = ser.read_json(args.config)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {args.config}") from exc
        nested = config.get("scenario") if isinstance(config.get("scenario"), dict) else {}
        for key, src in (("duration", "duration"), ("step", "step_size")):
            if src in nested:
                params[key] = nested[src]
        if config.get("kind") == "scenario" and "step_size" in config:
            params["step"] = config["step_size"]
        for key, value in config.items():
            if key in params:
                params[key] = value
    for key in _PARAM_FLAGS:
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    for key, value in _parse_set(args.set).items():
        if key not in params:
            raise ConfigError(f"unknown parameter {key!r} in --set")
        params[key] = value
    params["_config"] = config
    return params


def _out_dir(args) -> Path:
    out = Path(args.out)
    if not out.is_dir():
        raise FileNotFoundError(f"output directory does not exist: {out}")
    if not os.access(out, os.W_OK):
        raise PermissionError(f"output directory is not writable: {out}")
    return out


def _gains_from_params(p: dict) -> ControllerGains:
    missing = [k for k in ("kv", "kp", "hw") if p.get(k) is None]
    if missing:
        raise ConfigError(f"missing gain(s): {', '.join(missing)}")
    hw = p["hw"]
    if isinstance(hw, list):
        if len(hw) != 1:
            raise ConfigError("expected a single headway")
        hw = hw[0]
    return ControllerGains(ka=float(p["ka"]), kv=float(p["kv"]), kp=float(p["kp"]),
                           hw=float(hw), ell=float(p["ell"]), r=p["r"])


def _sweep_kwargs(p: dict) -> dict:
    return {
        "tau_grid_points": int(p["tau_grid"]),
        "grid_points": int(p["grid"]),
        "omega_max": None if p["omega_max"] is None else float(p["omega_max"]),
        "refine_tol": float(p["refine_tol"]),
    }


def _magnitude_rows(g: ControllerGains, tau0: float, worst_tau: float, omega_max: float, points: int):
    """Plot polyline: a handful of tau values plus the worst one."""
    taus = sorted(set(np.geomspace(tau0 / 1000.0, tau0, 5).tolist()) | {float(worst_tau)})
    omegas = np.geomspace(frequency.OMEGA_MIN, omega_max, points)
    branches = [1] if g.r == 1 else [1, 2]
    rows = []
    for tau in taus:
        for q in branches:
            mags = frequency.branch_magnitude(g, q, tau, scaled=True)(omegas)
            rows.extend((tau, q, w, m) for w, m in zip(omegas, mags))
    return rows


# -- commands ----------------------------------------------------------------


def cmd_synthesize(args, p) -> int:
    # parameter validation runs before touching the output directory
    hw_lower_bound_cacc_plus(float(p["tau0"]), float(p["ell"]), float(p["ka"]), p["r"])
    out = _out_dir(args)
    hw = p["hw"][0] if isinstance(p["hw"], list) else p["hw"]
    res = synthesize(
        float(p["tau0"]), float(p["ell"]), float(p["ka"]), r=p["r"], eta=float(p["eta"]),
        kv_choice=p["kv"], kp_choice=p["kp"], hw=hw, **_sweep_kwargs(p),
    )
    ser.write_json(out / "synthesis.json", ser.synthesis_to_dict(res))
    rows = []
    for name, pts in res.region.boundary_polylines().items():
        rows.extend((name, kv, kp) for kv, kp in pts)
    ser.atomic_write_text(out / "region.csv", ser.rows_to_csv(["series", "kv", "kp"], rows))
    g = res.gains
    print(f"hw={g.hw:.6g} (bound {res.hw_lower_bound:.6g}, branch {res.active_branch}) "
          f"kv={g.kv:.6g} kp={g.kp:.6g} peak={res.certification.peak_magnitude:.10g}")
    return EXIT_OK


def cmd_verify(args, p) -> int:
    g = _gains_from_params(p)
    out = _out_dir(args)
    tau0 = float(p["tau0"])
    rep = frequency.robust_string_stability(g, tau0, **_sweep_kwargs(p))
    payload = ser.report_to_dict(rep)
    payload["gains"] = ser.gains_to_dict(g)
    payload["conservative_check"] = frequency.conservative_margin_check(g, tau0)
    ser.write_json(out / "stability.json", payload)
    rows = _magnitude_rows(g, tau0, rep.worst_tau, rep.omega_max, int(p["plot_points"]))
    ser.atomic_write_text(out / "magnitude.csv", ser.rows_to_csv(["tau", "branch", "omega", "magnitude"], rows))
    verdict = "robustly string stable" if rep.robust else "NOT robustly string stable"
    print(f"{verdict}: peak {rep.positive_peak_magnitude:.10g} at omega={rep.peak_omega:.6g}, tau={rep.worst_tau:.6g}")
    return EXIT_OK


def cmd_falsify(args, p) -> int:
    g = _gains_from_params(p)
    out = _out_dir(args)
    w = frequency.falsify_ka_ge_1(g, float(p["tau0"]), k_cap=int(p["k_cap"]))
    check = frequency.eval_H1(g, w.tau_witness, w.omega_hat)
    payload = ser.witness_to_dict(w)
    payload["gains"] = ser.gains_to_dict(g)
    payload["tau0"] = float(p["tau0"])
    payload["reevaluated_magnitude"] = check.magnitude
    ser.write_json(out / "witness.json", payload)
    print(f"|H1| = {check.magnitude:.10g} at omega={w.omega_hat:.6g}, tau={w.tau_witness:.6g} (k={w.harmonic_index})")
    return EXIT_OK


def _scenario_from_params(p: dict):
    cfg = p["_config"]
    if isinstance(cfg.get("scenario"), dict):
        scen = ser.scenario_from_dict(cfg["scenario"])
    elif cfg.get("kind") == "scenario":
        scen = ser.scenario_from_dict(cfg)
    else:
        return presets.build_paper_scenario(str(p["variant"]), duration=float(p["duration"]),
                                            step_size=float(p["step"]))
    return replace(scen, duration=float(p["duration"]), step_size=float(p["step"]))


def _run_simulation(scen, out: Path, stride: int, prefix: str = "") -> dict:
    scen.validate()
    trace = simulate(scen)
    metrics = trace.metrics()
    ser.write_trace_csv(out / f"{prefix}trace.csv", trace, stride)
    idx = np.arange(0, len(trace.times), stride)
    length = trace.platoon_length()
    ser.atomic_write_text(
        out / f"{prefix}platoon_length.csv",
        ser.rows_to_csv(["time", "length"], zip(trace.times[idx], length[idx])),
    )
    ser.write_json(out / f"{prefix}metrics.json", {"kind": "simulation_metrics", **metrics, "scenario_config": ser.scenario_to_dict(scen)})
    return metrics


def cmd_simulate(args, p) -> int:
    scen = _scenario_from_params(p)
    out = _out_dir(args)
    stride = int(p["stride"])
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    metrics = _run_simulation(scen, out, stride)
    print(f"{scen.name}: max ratio {metrics['max_ratio']:.8f}, min front gap {min(metrics['min_front_gap']):.4f} m")
    return EXIT_OK


def cmd_sweep(args, p) -> int:
    hws = p["hw"]
    if hws is None:
        raise ConfigError("sweep needs at least one --hw value")
    if not isinstance(hws, list):
        hws = [hws]
    out = _out_dir(args)
    tau0 = float(p["tau0"])
    entries, rows = [], []
    for hw in hws:
        g = _gains_from_params({**p, "hw": hw})
        rep = frequency.robust_string_stability(g, tau0, **_sweep_kwargs(p))
        entries.append({"hw": g.hw, "robust": rep.robust, "positive_peak_magnitude": rep.positive_peak_magnitude,
                        "peak_omega": rep.peak_omega, "worst_tau": rep.worst_tau})
        omegas = np.geomspace(frequency.OMEGA_MIN, rep.omega_max, int(p["plot_points"]))
        mags = np.abs(frequency.h1_response(g, tau0, omegas)) if g.r == 1 else \
            frequency.branch_magnitude(g, 1, tau0, scaled=True)(omegas)
        rows.extend((g.hw, w, m) for w, m in zip(omegas, mags))
        print(f"hw={g.hw:.6g}: peak {rep.positive_peak_magnitude:.10g} {'ok' if rep.robust else 'exceeds 1'}")
    ser.write_json(out / "sweep.json", {"kind": "headway_sweep", "tau0": tau0, "results": entries})
    ser.atomic_write_text(out / "sweep.csv", ser.rows_to_csv(["hw", "omega", "magnitude"], rows))
    return EXIT_OK


def cmd_paper_repro(args, p) -> int:
    out = _out_dir(args)
    variant = args.name or (args.variant if args.variant else None)
    variants = [variant] if variant else list(presets.VARIANTS)
    for v in variants:
        if v not in presets.VARIANTS:
            raise ConfigError(f"unknown variant {v!r}; expected one of {presets.VARIANTS}")
    stride = int(p["stride"])
    summary = {"kind": "paper_repro", "variants": {}}
    for v in variants:
        scen = presets.build_paper_scenario(v, duration=float(p["duration"]), step_size=float(p["step"]))
        m = _run_simulation(scen, out, stride, prefix=f"{v}_")
        summary["variants"][v] = {"max_ratio": m["max_ratio"], "max_ratio_corrected": m["max_ratio_corrected"],
                                  "platoon_length_initial": m["platoon_length_initial"]}
        print(f"{v}: max ratio {m['max_ratio']:.8f}")
    designs = {"cacc": presets.CACC_GAINS, "caccplus_r3": presets.CACC_PLUS_R3_GAINS,
               "cacc_unstable": presets.CACC_UNSTABLE_GAINS}
    summary["designs"] = {}
    for name, g in designs.items():
        rep = frequency.robust_string_stability(g, presets.TAU0, **_sweep_kwargs(p))
        summary["designs"][name] = {"gains": ser.gains_to_dict(g), "robust": rep.robust,
                                    "positive_peak_magnitude": rep.positive_peak_magnitude}
    ser.write_json(out / "paper_repro.json", summary)
    return EXIT_OK


COMMANDS = {
    "synthesize": cmd_synthesize,
    "verify": cmd_verify,
    "falsify": cmd_falsify,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "paper-repro": cmd_paper_repro,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON parameter or scenario file")
    common.add_argument("--out", default=".", help="existing output directory (default: cwd)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any parameter")
    common.add_argument("--tau0", type=float)
    common.add_argument("--ell", type=float)
    common.add_argument("--ka", type=float)
    common.add_argument("--kv", type=float)
    common.add_argument("--kp", type=float)
    common.add_argument("--r", type=int)
    common.add_argument("--eta", type=float)
    common.add_argument("--omega-max", dest="omega_max", type=float)
    common.add_argument("--grid", type=int, help="frequency grid points")
    common.add_argument("--tau-grid", dest="tau_grid", type=int)
    common.add_argument("--refine-tol", dest="refine_tol", type=float)
    common.add_argument("--step", type=float, help="integration step (s)")
    common.add_argument("--duration", type=float)
    common.add_argument("--stride", type=int, help="write every n-th sample to CSV")
    common.add_argument("--plot-points", dest="plot_points", type=int)
    common.add_argument("--k-cap", dest="k_cap", type=int)
    common.add_argument("--variant", choices=presets.VARIANTS)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="delayplatoon", description="Delay-aware CACC design, verification and simulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, parents=[common])
        if name == "sweep":
            sp.add_argument("--hw", type=float, nargs="+")
        else:
            sp.add_argument("--hw", type=float)
        if name == "paper-repro":
            sp.add_argument("name", nargs="?", choices=presets.VARIANTS, help="single variant to run")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        if args.verbose:
            log.setLevel(logging.DEBUG)
        params = resolve_params(args)
        return COMMANDS[args.command](args, params)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NotApplicableError as exc:
        print(f"not applicable: {exc}", file=sys.stderr)
        return EXIT_NOT_APPLICABLE
    except SearchExhaustedError as exc:
        print(f"search exhausted: {exc}", file=sys.stderr)
        return EXIT_SEARCH_EXHAUSTED
    except (CertificationError, SimulationBlowupError, DegenerateInputError, SingularSystemError,
            RegionEmptyError, InsufficientHistoryError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
