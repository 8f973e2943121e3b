"""Command-line entry point: ``voltdac {simulate,sweep,bounds,gradcheck,export-scenario}``.

Exit codes: 0 success, 2 configuration error, 3 diverged run, 4 gradient
mismatch. The default output directory is ``$VOLTDAC_OUT_DIR`` or ``runs``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .grid_model import NetworkError, model_error
from .gradcheck import gradient_check
from .io import metrics_to_dict, sweep_to_csv, write_json, write_manifest, write_trace_csv, atomic_write_text
from .scenario import ScenarioError, export_scenario_csv
from .simulator import (
    SWEEP_AXES,
    ConfigError,
    SimulationConfig,
    build_plant,
    compute_metrics,
    run_closed_loop,
    sweep,
)
from .theory import (
    PreconditionError,
    degradation_envelope,
    estimate_constants,
    gradient_norm_bound,
    init_param_caps,
    stability_learning_rate,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_GRADIENT = 0, 2, 3, 4
OUT_ENV = "VOLTDAC_OUT_DIR"
INFINITE = "inf"  # JSON has no infinity; unbounded caps are reported as this string

# shorthand flags for common scalar overrides
SHORTCUTS = {
    "eta": "controller.eta",
    "H": "controller.H",
    "controller": "controller.kind",
    "delay": "simulation.delay",
    "seed": "simulation.seed",
    "alpha": "scenario.alpha",
    "horizon": "scenario.horizon",
}


class UsageError(Exception):
    pass


def _parse_scalar(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_config(path: str | Path, overrides: Sequence[str] = (), shortcuts: dict | None = None) -> SimulationConfig:
    """Read a JSON config and apply ``section.key=value`` overrides."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    updates: dict[str, Any] = {}
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep or "." not in key:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        updates[key] = _parse_scalar(value)
    for name, value in (shortcuts or {}).items():
        if value is not None:
            updates[SHORTCUTS[name]] = value
    for key, value in updates.items():
        section, field = key.split(".", 1)
        if section == "network":
            raise ConfigError("network is not a section; edit the config file")
        raw.setdefault(section, {})
        if not isinstance(raw[section], dict):
            raise ConfigError(f"{section} must be an object")
        raw[section][field] = value
    return SimulationConfig.from_dict(raw, base_dir=path.parent)


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV, "runs"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _seeds(config: SimulationConfig) -> dict:
    return {
        "scenario": int(config.scenario.get("seed", config.simulation["seed"])),
        "simulation": int(config.simulation["seed"]),
        "model_error": int(config.model_error["seed"]),
    }


def _finite_or_sentinel(value: float) -> float | str:
    return value if math.isfinite(value) else INFINITE


def cmd_simulate(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = load_config(args.config, args.set, _shortcut_values(args))
    plant = build_plant(config)
    trace = run_closed_loop(config, plant)
    metrics = compute_metrics(trace, limits=config.limits)
    out = _out_dir(args.out)
    trace_path = write_trace_csv(trace, out / "trace.csv")
    metrics_path = write_json(out / "metrics.json", {
        "metrics": metrics_to_dict(metrics),
        "variation_violations": int(trace.variation_violations().sum()),
        "model_relative_error": trace.metadata["model_relative_error"],
        "load_clip_rate": trace.metadata["load_clip_rate"],
        "diverged": trace.diverged,
    })
    write_manifest(
        out, "simulate", config.to_dict(), [trace_path, metrics_path], time.perf_counter() - started,
        __version__, seeds=_seeds(config), diverged=trace.diverged, steps_completed=trace.steps,
        config_digest=config.digest(),
    )
    print(json.dumps(metrics.summary()))
    if trace.diverged:
        print(f"run diverged after {trace.steps} steps; truncated trace written", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def _parse_values(text: str, axis: str) -> list:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ConfigError("sweep needs at least one value")
    try:
        if axis in ("H", "T_d", "seed"):
            return [int(p) for p in parts]
        return [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"could not parse sweep values {text!r} for axis {axis}") from None


def cmd_sweep(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {args.axis!r}")
    values = _parse_values(args.values, args.axis)
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    config = load_config(args.config, args.set, _shortcut_values(args))
    rows = sweep(config, args.axis, values, jobs=args.jobs)
    out = _out_dir(args.out)
    table = atomic_write_text(out / "sweep.csv", sweep_to_csv(args.axis, rows))
    write_manifest(
        out, "sweep", config.to_dict(), [table], time.perf_counter() - started, __version__,
        seeds=_seeds(config), axis=args.axis, values=sorted(values),
        diverged_values=[v for v, m in rows if m.diverged],
    )
    for value, m in rows:
        print(f"{args.axis}={value}: " + json.dumps(m.summary()))
    return EXIT_OK


def bounds_report(config: SimulationConfig) -> dict:
    """Theory constants and caps for the configured scenario and model error."""
    plant = build_plant(config)
    weights = config.weights
    eps_abs, eps_rel = model_error(plant.true, plant.estimate)
    consts = estimate_constants(plant.scenario, plant.true, eps_abs, weights)
    exact = estimate_constants(plant.scenario, plant.true, 0.0, weights)

    def cap(c) -> float | str:
        try:
            return _finite_or_sentinel(stability_learning_rate(c))
        except ZeroDivisionError:
            return INFINITE

    ctrl = config.controller
    H, gamma = int(ctrl["H"]), float(ctrl["gamma"])
    try:
        caps: list | str = [_finite_or_sentinel(v) for v in init_param_caps(consts, gamma, H)]
    except ZeroDivisionError:
        caps = INFINITE
    report: dict[str, Any] = {
        "constants": {k: _finite_or_sentinel(float(v)) for k, v in consts.__dict__.items()},
        "model_relative_error": eps_rel,
        "eta": float(ctrl["eta"]),
        "eta_cap": cap(consts),
        "eta_cap_exact_model": cap(exact),
        "init_caps": caps,
        "gradient_norm_bound": _finite_or_sentinel(gradient_norm_bound(exact)),
    }
    eta_cap = report["eta_cap"]
    report["eta_within_cap"] = eta_cap == INFINITE or float(ctrl["eta"]) <= eta_cap
    if caps == INFINITE:
        # no disturbance and no PV headroom: there is no gap to bound
        report["envelope"] = {"status": "undefined", "reason": "W + eps_B * U_tilde = 0"}
        return report
    try:
        m_bar = caps[0] if caps[0] != INFINITE else math.inf
        Y, X = degradation_envelope(consts, float(m_bar), plant.scenario.horizon)
        rate = float(m_bar) * (consts.kappa_B + consts.eps_B)
        report["envelope"] = {
            "status": "ok",
            "M_bar": _finite_or_sentinel(float(m_bar)),
            "rate": _finite_or_sentinel(rate),
            "contracting": rate <= 1.0,
            "Y_first": _finite_or_sentinel(float(Y[0])),
            "Y_max": _finite_or_sentinel(float(Y.max())),
            "Y_last": _finite_or_sentinel(float(Y[-1])),
            "X_max": _finite_or_sentinel(float(X.max())),
        }
    except PreconditionError as exc:
        report["envelope"] = {
            "status": "precondition_violated",
            "reason": str(exc),
            "eps_B": consts.eps_B,
            "W_over_U": _finite_or_sentinel(consts.W / consts.U_tilde) if consts.U_tilde > 0 else INFINITE,
        }
    return report


def cmd_bounds(args: argparse.Namespace) -> int:
    config = load_config(args.config, args.set, _shortcut_values(args))
    print(json.dumps(bounds_report(config), indent=2, sort_keys=True, allow_nan=False))
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    if not 1 <= args.n <= 5 or not 1 <= args.H <= 3:
        raise ConfigError("gradcheck needs 1 <= n <= 5 and 1 <= H <= 3")
    result = gradient_check(args.seed, args.n, args.H, args.points, corrupt=args.corrupt_gradient)
    line = {
        "max_rel_error": result.max_rel_error,
        "worst_point": result.worst_point,
        "points": result.points,
        "tolerance": result.tolerance,
        "passed": result.passed,
        "seconds": time.perf_counter() - started,
    }
    print(json.dumps(line))
    if not result.passed:
        print(f"gradient mismatch at point {result.worst_point}: relative error {result.max_rel_error:.3e}",
              file=sys.stderr)
        return EXIT_GRADIENT
    return EXIT_OK


def cmd_export_scenario(args: argparse.Namespace) -> int:
    started = time.perf_counter()
    config = load_config(args.config, args.set, _shortcut_values(args))
    plant = build_plant(config)
    out = _out_dir(args.out)
    path = out / "scenario.csv"
    tmp = out / ".scenario.csv.tmp"
    export_scenario_csv(plant.scenario, tmp)
    os.replace(tmp, path)
    write_manifest(out, "export-scenario", config.to_dict(), [path], time.perf_counter() - started,
                   __version__, seeds=_seeds(config), load_clip_rate=plant.scenario.load_clip_rate)
    print(str(path))
    return EXIT_OK


def _shortcut_values(args: argparse.Namespace) -> dict:
    return {k: getattr(args, k, None) for k in SHORTCUTS}


def _add_config_args(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("config", help="JSON run config")
    if out:
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./runs)")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config field; VALUE is parsed as JSON when possible")
    p.add_argument("--eta", type=float)
    p.add_argument("--H", type=int)
    p.add_argument("--controller", choices=("dac", "direct_opt", "none"))
    p.add_argument("--delay", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--horizon", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voltdac", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one closed loop and write trace, metrics and manifest")
    _add_config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="one run per value of a single axis")
    _add_config_args(p)
    p.add_argument("--axis", required=True, help=f"one of {', '.join(SWEEP_AXES)}")
    p.add_argument("--values", required=True, help="comma separated, e.g. 1,5,10")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bounds", help="print theory constants and caps as JSON")
    _add_config_args(p, out=False)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("gradcheck", help="compare the analytic policy gradient with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=3)
    p.add_argument("--H", type=int, default=2)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-scenario", help="write the generated load and PV series as CSV")
    _add_config_args(p)
    p.set_defaults(func=cmd_export_scenario)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2 already
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError, NetworkError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
