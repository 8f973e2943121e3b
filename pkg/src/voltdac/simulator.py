"""Closed-loop simulation of the controller against the true linear grid."""

from __future__ import annotations

import copy
import hashlib
import json
import time
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .baselines import QpProblem, direct_opt_input, no_control_input
from .controller import (
    ControllerState,
    CostWeights,
    compute_input,
    estimate_disturbance,
    identity_blocks,
    surrogate_cost_and_gradient,
    update_params,
)
from .grid_model import (
    SensitivityModel,
    compute_sensitivity,
    disturbance_from_loads,
    load_network,
    model_error,
    perturb_model,
)
from .scenario import Scenario, build_scenario
from .theory import estimate_constants, init_param_caps

CONTROLLERS = ("dac", "direct_opt", "none")
SWEEP_AXES = ("H", "alpha", "eta", "T_d", "eps_scaling", "seed")
CONFIG_SECTIONS = {"network", "scenario", "controller", "model_error", "simulation"}
CONTROLLER_FIELDS = {"kind", "H", "eta", "gamma", "M0", "c_p", "c_q", "c_x", "project", "qp_tol", "qp_max_iter", "qp_method"}
MODEL_ERROR_FIELDS = {"enabled", "scaling_range", "n_permuted", "seed", "pair_seed"}
SIMULATION_FIELDS = {"delay", "v_limits", "seed", "divergence_factor"}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


def _check_fields(section: Mapping[str, Any], allowed: set[str], where: str) -> None:
    extra = set(section) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown fields {sorted(extra)}")


@dataclass
class SimulationConfig:
    """Fully resolved run description (all defaults expanded)."""

    network: str = "feeder34"
    scenario: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    model_error: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    base_dir: str = "."

    @classmethod
    def from_dict(cls, raw: Mapping[str, Any], base_dir: str | Path = ".") -> "SimulationConfig":
        _check_fields(raw, CONFIG_SECTIONS, "config")
        ctrl = {
            "kind": "dac", "H": 1, "eta": 5e-4, "gamma": 0.5, "M0": [0.05, 0.1],
            "c_p": 3.0, "c_q": 1.0, "c_x": 0.5, "project": False,
            "qp_tol": 1e-6, "qp_max_iter": 5000, "qp_method": "bvls",
        }
        ctrl.update(raw.get("controller", {}))
        _check_fields(ctrl, CONTROLLER_FIELDS, "controller")
        err = {"enabled": False, "scaling_range": [0.8, 1.2], "n_permuted": 4, "seed": 0, "pair_seed": None}
        err.update(raw.get("model_error", {}))
        _check_fields(err, MODEL_ERROR_FIELDS, "model_error")
        sim = {"delay": 0, "v_limits": [-0.55, 0.55], "seed": 0, "divergence_factor": 100.0}
        sim.update(raw.get("simulation", {}))
        _check_fields(sim, SIMULATION_FIELDS, "simulation")
        cfg = cls(
            network=str(raw.get("network", "feeder34")),
            scenario=dict(raw.get("scenario", {})),
            controller=ctrl,
            model_error=err,
            simulation=sim,
            base_dir=str(base_dir),
        )
        cfg.validate()
        return cfg

    def validate(self) -> None:
        c = self.controller
        if c["kind"] not in CONTROLLERS:
            raise ConfigError(f"controller.kind must be one of {CONTROLLERS}, got {c['kind']!r}")
        if int(c["H"]) < 1:
            raise ConfigError("controller.H must be >= 1")
        if float(c["eta"]) < 0:
            raise ConfigError("controller.eta must be nonnegative")
        if not 0 < float(c["gamma"]) < 1:
            raise ConfigError("controller.gamma must lie in (0, 1)")
        if not (c["M0"] == "auto" or (isinstance(c["M0"], Sequence) and len(c["M0"]) == 2)):
            raise ConfigError("controller.M0 must be 'auto' or [p_gain, q_gain]")
        if c["qp_method"] not in ("pg", "bvls"):
            raise ConfigError(f"controller.qp_method must be 'pg' or 'bvls', got {c['qp_method']!r}")
        for k in ("c_p", "c_q", "c_x"):
            if float(c[k]) < 0:
                raise ConfigError(f"controller.{k} must be nonnegative")
        s = self.scenario
        if "alpha" in s and not 0.0 <= float(s["alpha"]) <= 1.0:
            raise ConfigError(f"scenario.alpha must lie in [0, 1], got {s['alpha']}")
        if "sigma" in s and float(s["sigma"]) < 0:
            raise ConfigError("scenario.sigma must be nonnegative")
        if "horizon" in s and int(s["horizon"]) < 1:
            raise ConfigError("scenario.horizon must be >= 1")
        if int(self.simulation["delay"]) < 0:
            raise ConfigError("simulation.delay must be >= 0")
        lo, hi = self.simulation["v_limits"]
        if not float(lo) < float(hi):
            raise ConfigError("simulation.v_limits must satisfy lower < upper")
        lo_s, hi_s = self.model_error["scaling_range"]
        if not 0 < float(lo_s) <= float(hi_s):
            raise ConfigError("model_error.scaling_range must satisfy 0 < lo <= hi")

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **updates: Any) -> "SimulationConfig":
        """Copy with dotted-path overrides, e.g. ``{"controller.eta": 1e-4}``."""
        d = copy.deepcopy(self.to_dict())
        for path, value in updates.items():
            section, key = path.split(".", 1)
            d[section][key] = value
        return SimulationConfig.from_dict(d, self.base_dir)

    @property
    def weights(self) -> CostWeights:
        c = self.controller
        return CostWeights(float(c["c_p"]), float(c["c_q"]), float(c["c_x"]))

    @property
    def limits(self) -> tuple[float, float]:
        lo, hi = self.simulation["v_limits"]
        return float(lo), float(hi)


@dataclass(eq=False)
class SimulationTrace:
    """Per-step record; row ``t`` holds the action at ``t`` and the voltage it produced."""

    x: np.ndarray
    u: np.ndarray
    pre: np.ndarray
    u_tilde: np.ndarray
    w: np.ndarray
    w_hat: np.ndarray
    m_norms: np.ndarray
    curtail_cost: np.ndarray
    reactive_cost: np.ndarray
    voltage_cost: np.ndarray
    variation: np.ndarray
    diverged: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.x.shape[0]

    @property
    def n(self) -> int:
        return self.x.shape[1]

    def variation_violations(self) -> np.ndarray:
        """Steps where the consecutive policy-term change exceeds ``2 |u_tilde_t|``."""
        cap = 2.0 * np.linalg.norm(self.u_tilde[: len(self.variation)], axis=1)
        return self.variation > cap


@dataclass
class Metrics:
    avg_voltage_deviation: float
    total_control_cost: float
    total_cost: float
    fluctuation_std: list
    fluctuation_ratio: list
    violation_steps: int
    violation_count: int
    upper_violation_count: int
    lower_violation_count: int
    max_violation: float
    steps: int
    diverged: bool

    def summary(self) -> dict:
        return {
            "avg_voltage_deviation": self.avg_voltage_deviation,
            "total_control_cost": self.total_control_cost,
            "total_cost": self.total_cost,
            "mean_fluctuation_std": float(np.mean(self.fluctuation_std)),
            "violation_steps": self.violation_steps,
            "max_violation": self.max_violation,
            "steps": self.steps,
            "diverged": self.diverged,
        }


def initial_parameters(ctrl: Mapping[str, Any], n: int, scenario: Scenario | None = None,
                       model: SensitivityModel | None = None, eps_B: float = 0.0) -> np.ndarray:
    """Initial ``(H, 2n, n)`` parameter array from a controller config section.

    ``[p_gain, q_gain]`` gives identity blocks decayed by ``gamma``; ``"auto"``
    scales the same shape so each block's spectral norm equals its cap.
    """
    H, gamma = int(ctrl["H"]), float(ctrl["gamma"])
    if ctrl["M0"] == "auto":
        if scenario is None or model is None:
            raise ConfigError("controller.M0 = 'auto' needs a scenario and model")
        consts = estimate_constants(scenario, model, eps_B, CostWeights(ctrl["c_p"], ctrl["c_q"], ctrl["c_x"]))
        caps = init_param_caps(consts, gamma, H)
        shape = identity_blocks(n, 0.05, 0.1)
        shape /= np.linalg.norm(shape, 2)
        return np.stack([cap * shape for cap in caps])
    p_gain, q_gain = (float(v) for v in ctrl["M0"])
    base = identity_blocks(n, p_gain, q_gain)
    return np.stack([gamma**i * base for i in range(H)])


@dataclass
class Plant:
    """Everything a run needs besides the controller settings."""

    true: SensitivityModel
    estimate: SensitivityModel
    scenario: Scenario

    @property
    def eps_B(self) -> float:
        return model_error(self.true, self.estimate)[0]


def build_plant(config: SimulationConfig, model_seed: int | None = None) -> Plant:
    net_ref = config.network
    path = Path(config.base_dir) / net_ref
    net = load_network(path if path.suffix and path.exists() else net_ref)
    true = compute_sensitivity(net)
    scen_cfg = dict(config.scenario)
    scen_cfg.setdefault("seed", int(config.simulation["seed"]))
    scenario = build_scenario(scen_cfg, net.n, sorted(net.pv_sites))
    err = config.model_error
    if err["enabled"]:
        seed = int(err["seed"]) if model_seed is None else int(model_seed)
        estimate = perturb_model(true, tuple(err["scaling_range"]), int(err["n_permuted"]), seed)
    else:
        estimate = true
    return Plant(true, estimate, scenario)


def simulate(
    plant: Plant,
    ctrl: Mapping[str, Any],
    delay: int = 0,
    limits: tuple[float, float] = (-0.55, 0.55),
    divergence_factor: float = 100.0,
    M0: np.ndarray | None = None,
) -> SimulationTrace:
    """Run one closed loop.

    With ``delay = T_d`` the controller processes the measurement of step
    ``t`` at the end of step ``t + T_d`` and the resulting parameters reach
    the inverters ``T_d`` steps later; before the first packet arrives the
    inverters use the initial parameters. The disturbances in the policy are
    always the latest reconstructions, so only learning is delayed.
    """
    scen, B_true, B_hat = plant.scenario, plant.true, plant.estimate
    n, T = B_true.n, scen.horizon
    kind = ctrl["kind"]
    weights = CostWeights(float(ctrl["c_p"]), float(ctrl["c_q"]), float(ctrl["c_x"]))
    w_all = disturbance_from_loads(B_true, scen.p_l, scen.q_l)
    U_tilde = scen.natural_inputs()
    lo_all, hi_all = scen.bounds.u_lo, scen.bounds.u_hi
    if M0 is None:
        M0 = initial_parameters(ctrl, n, scen, B_true, plant.eps_B)

    state = ControllerState(M0, float(ctrl["eta"]), float(ctrl["gamma"]), project=bool(ctrl["project"]))
    if state.project:
        consts = estimate_constants(scen, B_true, plant.eps_B, weights)
        state.caps = np.array(init_param_caps(consts, state.gamma, state.H))
    H = state.H
    inbox: deque = deque()  # measurements in flight to the controller
    outbox: deque = deque()  # parameters in flight to the inverters
    M_used = state.M.copy()
    local_buf = state.buffer.copy()  # latest reconstructions, inverter side
    qp_u = None

    x = np.zeros((T, n))
    u_rec = np.zeros((T, 2 * n))
    pre_rec = np.zeros((T, 2 * n))
    w_hat = np.zeros((T, n))
    norms = np.zeros((T, H))
    terms = np.zeros((T, 3))
    policy = np.zeros((T, 2 * n))
    bound = divergence_factor * max(abs(limits[0]), abs(limits[1]))
    diverged = False
    last = T
    started = time.perf_counter()

    for t in range(T):
        while outbox and outbox[0][0] <= t:
            M_used = outbox.popleft()[1]
        u_tilde, lo, hi = U_tilde[t], lo_all[t], hi_all[t]

        if kind == "dac":
            policy[t] = np.einsum("hij,hj->i", M_used, local_buf)
            pre = u_tilde + policy[t]
            u = np.clip(pre, lo, hi)
        elif kind == "direct_opt":
            # persistence forecast: the latest reconstructed disturbance
            prob = QpProblem(B_hat.B, local_buf[0], u_tilde, lo, hi, weights)
            res = direct_opt_input(prob, float(ctrl["qp_tol"]), int(ctrl["qp_max_iter"]), u0=qp_u,
                                   method=str(ctrl.get("qp_method", "pg")))
            qp_u = res.u
            pre = u = res.u
        else:
            pre = u_tilde
            u = no_control_input(u_tilde, lo, hi)

        x_next = B_true.B @ u + w_all[t]
        x[t], u_rec[t], pre_rec[t] = x_next, u, pre
        w_hat[t] = estimate_disturbance(x_next, B_hat, u)
        local_buf = np.roll(local_buf, 1, axis=0)
        local_buf[0] = w_hat[t]
        norms[t] = [np.linalg.norm(Mi, 2) for Mi in M_used]
        dp = u[:n] - u_tilde[:n]
        terms[t] = (weights.c_p * dp @ dp, weights.c_q * u[n:] @ u[n:], weights.c_x * x_next @ x_next)

        if not np.all(np.isfinite(x_next)) or np.max(np.abs(x_next)) > bound:
            diverged, last = True, t + 1
            break

        inbox.append((t + delay, t))
        while inbox and inbox[0][0] <= t:
            tau = inbox.popleft()[1]
            if kind == "dac":
                _, grad = surrogate_cost_and_gradient(
                    state.M, state.buffer, w_hat[tau], U_tilde[tau], B_hat, weights, lo_all[tau], hi_all[tau]
                )
                if not np.all(np.isfinite(grad)):
                    diverged, last = True, t + 1
                    break
                update_params(state, grad)
            state.push(w_hat[tau])
        if diverged:
            break
        outbox.append((t + 1 + delay, state.M.copy()))

    variation = np.linalg.norm(np.diff(policy[:last], axis=0), axis=1)
    meta = {
        "controller": kind,
        "delay": int(delay),
        "wall_time_s": time.perf_counter() - started,
        "steps_completed": last,
        "final_M_norms": [float(v) for v in np.linalg.norm(state.M, ord=2, axis=(1, 2))],
    }
    return SimulationTrace(
        x[:last], u_rec[:last], pre_rec[:last], U_tilde[:last], w_all[:last], w_hat[:last],
        norms[:last], terms[:last, 0], terms[:last, 1], terms[:last, 2], variation, diverged, meta,
    )


def run_closed_loop(config: SimulationConfig, plant: Plant | None = None) -> SimulationTrace:
    """Build the plant described by ``config`` and run it."""
    plant = build_plant(config) if plant is None else plant
    sim = config.simulation
    trace = simulate(
        plant, config.controller, int(sim["delay"]), config.limits, float(sim["divergence_factor"])
    )
    trace.metadata.update(
        {
            "config_digest": config.digest(),
            "scenario_seed": plant.scenario.seed,
            "model": dict(plant.estimate.provenance),
            "model_relative_error": model_error(plant.true, plant.estimate)[1],
            "load_clip_rate": plant.scenario.load_clip_rate,
        }
    )
    return trace


def compute_metrics(trace: SimulationTrace, weights: CostWeights | None = None,
                    limits: tuple[float, float] = (-0.55, 0.55)) -> Metrics:
    """Voltage deviation, control cost, per-bus fluctuation and limit violations.

    Cost terms were weighted during the run; ``weights`` is accepted for
    re-weighting and defaults to the run's own.
    """
    if trace.steps == 0:
        raise ValueError("empty trace")
    x = trace.x
    if weights is None:
        curtail, reactive, volt = trace.curtail_cost, trace.reactive_cost, trace.voltage_cost
    else:
        n = trace.n
        dp = trace.u[:, :n] - trace.u_tilde[:, :n]
        curtail = weights.c_p * np.sum(dp**2, axis=1)
        reactive = weights.c_q * np.sum(trace.u[:, n:] ** 2, axis=1)
        volt = weights.c_x * np.sum(x**2, axis=1)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(std > 0, mean / np.where(std > 0, std, 1.0), np.nan)
    lo, hi = limits
    over = np.maximum(x - hi, 0.0)
    under = np.maximum(lo - x, 0.0)
    excess = np.maximum(over, under)
    return Metrics(
        avg_voltage_deviation=float(np.mean(np.sum(x**2, axis=1))),
        total_control_cost=float(np.sum(curtail + reactive)),
        total_cost=float(np.sum(curtail + reactive + volt)),
        fluctuation_std=[float(v) for v in std],
        fluctuation_ratio=[float(v) for v in ratio],
        violation_steps=int(np.sum(np.any(excess > 0, axis=1))),
        violation_count=int(np.sum(excess > 0)),
        upper_violation_count=int(np.sum(over > 0)),
        lower_violation_count=int(np.sum(under > 0)),
        max_violation=float(excess.max()),
        steps=trace.steps,
        diverged=trace.diverged,
    )


def _axis_update(config: SimulationConfig, axis: str, value: Any) -> SimulationConfig:
    if axis == "H":
        return config.replace(**{"controller.H": int(value)})
    if axis == "alpha":
        return config.replace(**{"scenario.alpha": float(value)})
    if axis == "eta":
        return config.replace(**{"controller.eta": float(value)})
    if axis == "T_d":
        return config.replace(**{"simulation.delay": int(value)})
    if axis == "eps_scaling":
        v = float(value)
        return config.replace(**{"model_error.scaling_range": [1.0 - v, 1.0 + v], "model_error.enabled": True})
    if axis == "seed":
        return config.replace(**{"simulation.seed": int(value), "scenario.seed": int(value)})
    raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")


def _sweep_one(args: tuple[SimulationConfig, Any]) -> tuple[Any, Metrics]:
    config, value = args
    trace = run_closed_loop(config)
    return value, compute_metrics(trace, limits=config.limits)


def sweep(config: SimulationConfig, axis: str, values: Sequence[Any], jobs: int = 1) -> list[tuple[Any, Metrics]]:
    """One independent run per value, sorted by value; divergence does not abort."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"sweep axis must be one of {SWEEP_AXES}, got {axis!r}")
    if len(values) == 0:
        raise ConfigError("sweep needs at least one value")
    tasks = [(_axis_update(config, axis, v), v) for v in sorted(values)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_one, tasks))
    return [_sweep_one(task) for task in tasks]


@dataclass
class PairedResult:
    first: SimulationTrace
    second: SimulationTrace
    spread: float
    relative_errors: tuple[float, float]


def paired_inaccuracy_run(config: SimulationConfig, seeds: tuple[int, int] | None = None) -> PairedResult:
    """Run the configured controller under two perturbed models of the same grid.

    ``seeds`` defaults to ``(model_error.seed, model_error.pair_seed)``.
    ``spread`` is the largest per-bus voltage gap between the two runs.
    """
    if seeds is None:
        if config.model_error["pair_seed"] is None:
            raise ConfigError("model_error.pair_seed is needed for a paired run")
        seeds = (int(config.model_error["seed"]), int(config.model_error["pair_seed"]))
    err = dict(config.model_error, enabled=True)
    cfg = config.replace(**{f"model_error.{k}": v for k, v in err.items()})
    base = build_plant(cfg, seeds[0])
    other = build_plant(cfg, seeds[1]) if seeds[1] != seeds[0] else base
    t1 = run_closed_loop(cfg, base)
    t2 = run_closed_loop(cfg, Plant(base.true, other.estimate, base.scenario))
    k = min(t1.steps, t2.steps)
    spread = float(np.max(np.abs(t1.x[:k] - t2.x[:k])))
    errs = (model_error(base.true, base.estimate)[1], model_error(base.true, other.estimate)[1])
    return PairedResult(t1, t2, spread, errs)
