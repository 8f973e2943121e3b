"""Load and PV time series plus the per-step inverter capacity box."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

SCENARIO_FIELDS = {
    "horizon", "alpha", "sigma", "sigma_mode", "seed", "base_load_mw",
    "base_load_mvar", "pv", "reactive_fraction",
}
PV_FIELDS = {"sites", "sizes", "events", "seed", "floor", "jitter"}
EVENT_FIELDS = {"start", "duration", "depth", "sites"}


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class DropEvent:
    start: int
    duration: int
    depth: float
    sites: tuple[int, ...] | None = None  # None means every PV site


@dataclass(frozen=True, eq=False)
class InputBounds:
    """Box ``u_lo <= u <= u_hi`` per step; columns are ``[p_1..p_n, q_1..q_n]``."""

    u_lo: np.ndarray
    u_hi: np.ndarray
    reactive_fraction: float = 0.4

    def at(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        return self.u_lo[t], self.u_hi[t]


@dataclass(frozen=True, eq=False)
class Scenario:
    horizon: int
    p_l: np.ndarray
    q_l: np.ndarray
    pv_avail: np.ndarray
    bounds: InputBounds
    alpha: float
    sigma: float
    seed: int
    load_clip_rate: float = 0.0

    @property
    def n(self) -> int:
        return self.p_l.shape[1]

    def natural_input(self, t: int) -> np.ndarray:
        """Uncontrolled injection ``[p_avail_t; 0]``."""
        return np.concatenate([self.pv_avail[t], np.zeros(self.n)])

    def natural_inputs(self) -> np.ndarray:
        return np.hstack([self.pv_avail, np.zeros_like(self.pv_avail)])


def ar1_deviations(
    T: int, shape: tuple[int, ...], alpha: float, sigma: np.ndarray | float, rng: np.random.Generator
) -> np.ndarray:
    """Zero-started AR(1) deviations ``d_{t+1} = sqrt(1-a) d_t + sqrt(a) eta_t``.

    ``eta_t ~ N(0, sigma^2)`` elementwise, so the stationary variance is
    ``sigma^2`` for any ``alpha`` in (0, 1].
    """
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    keep, mix = np.sqrt(1.0 - alpha), np.sqrt(alpha)
    noise = rng.standard_normal((T,) + shape) * sigma
    d = np.zeros((T,) + shape)
    for t in range(T - 1):
        d[t + 1] = keep * d[t] + mix * noise[t]
    return d


def generate_loads(
    n: int,
    T: int,
    alpha: float,
    sigma: float | np.ndarray,
    base_loads: tuple[np.ndarray, np.ndarray] | np.ndarray,
    seed: int,
    *,
    return_clip_rate: bool = False,
):
    """Correlated uncontrollable loads ``(p_l, q_l)``, each ``T x n``.

    The AR(1) recursion runs on the deviation from ``base_loads`` (which is
    the ``t = 0`` row), independently per bus for p and q. ``sigma`` may be a
    scalar, a per-bus vector, or a ``(2, n)`` array for p and q separately.
    Loads are clipped at zero from below.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    if np.any(np.asarray(sigma) < 0):
        raise ScenarioError("sigma must be nonnegative")
    if T < 1 or n < 1:
        raise ScenarioError("need T >= 1 and n >= 1")
    base = np.broadcast_to(np.asarray(base_loads, dtype=float), (2, n))
    sig = np.broadcast_to(np.asarray(sigma, dtype=float), (2, n))
    rng = np.random.default_rng(seed)
    raw = base + ar1_deviations(T, (2, n), alpha, sig, rng)
    clipped = np.maximum(raw, 0.0)
    p_l, q_l = clipped[:, 0, :], clipped[:, 1, :]
    if return_clip_rate:
        return p_l, q_l, float(np.mean(raw < 0.0))
    return p_l, q_l


def pv_shape(T: int, floor: float = 0.35) -> np.ndarray:
    """Smooth bell-shaped daytime profile peaking at 1, never below ``floor``."""
    t = (np.arange(T) + 0.5) / T
    return floor + (1.0 - floor) * np.sin(np.pi * t) ** 2


def generate_pv(
    T: int,
    n: int,
    pv_sites: Sequence[int],
    sizes: Sequence[float],
    drop_events: Sequence[DropEvent | Mapping[str, Any]] = (),
    seed: int = 0,
    *,
    floor: float = 0.35,
    jitter: float = 0.0,
) -> np.ndarray:
    """Available PV active power, ``T x n`` (MW), zero away from PV sites.

    Each site follows the common bell profile scaled by its rated size, with
    optional small per-site multiplicative jitter (seeded). During a drop
    event the affected sites deliver ``(1 - depth)`` of their availability.
    """
    sites = [int(s) for s in pv_sites]
    if len(sizes) != len(sites):
        raise ScenarioError("need one PV size per site")
    if any(s < 1 or s > n for s in sites):
        raise ScenarioError("PV sites must be bus ids in 1..n")
    if any(float(z) < 0 for z in sizes):
        raise ScenarioError("PV sizes must be nonnegative")
    rng = np.random.default_rng(seed)
    shape = pv_shape(T, floor)
    avail = np.zeros((T, n))
    for site, size in zip(sites, sizes):
        avail[:, site - 1] = float(size) * shape
    if jitter > 0:
        wobble = 1.0 + jitter * rng.standard_normal((T, len(sites)))
        avail[:, [s - 1 for s in sites]] *= np.clip(wobble, 0.0, None)

    for raw in drop_events:
        ev = raw if isinstance(raw, DropEvent) else _event_from_mapping(raw)
        if ev.start < 0 or ev.duration < 1 or ev.start + ev.duration > T:
            raise ScenarioError(f"event [{ev.start}, {ev.start + ev.duration}) outside horizon {T}")
        if not 0.0 < ev.depth <= 1.0:
            raise ScenarioError(f"event depth must lie in (0, 1], got {ev.depth}")
        hit = sites if ev.sites is None else [int(s) for s in ev.sites]
        if not set(hit) <= set(sites):
            raise ScenarioError("event sites must be PV sites")
        cols = [s - 1 for s in hit]
        avail[ev.start:ev.start + ev.duration, cols] *= 1.0 - ev.depth
    return avail


def _event_from_mapping(raw: Mapping[str, Any]) -> DropEvent:
    extra = set(raw) - EVENT_FIELDS
    if extra:
        raise ScenarioError(f"unknown event fields: {sorted(extra)}")
    sites = raw.get("sites")
    return DropEvent(
        int(raw["start"]), int(raw["duration"]), float(raw["depth"]),
        None if sites is None else tuple(int(s) for s in sites),
    )


def capacity_bounds(pv_avail: np.ndarray, reactive_fraction: float = 0.4) -> InputBounds:
    """Active power in ``[0, avail]``, reactive in ``+-fraction * avail``."""
    if reactive_fraction < 0:
        raise ScenarioError("reactive_fraction must be nonnegative")
    pv_avail = np.atleast_2d(np.asarray(pv_avail, dtype=float))
    if np.any(pv_avail < 0):
        raise ScenarioError("PV availability must be nonnegative")
    q_cap = reactive_fraction * pv_avail
    u_lo = np.hstack([np.zeros_like(pv_avail), -q_cap])
    u_hi = np.hstack([pv_avail, q_cap])
    return InputBounds(u_lo, u_hi, float(reactive_fraction))


def _per_bus(value: Any, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(n, float(arr))
    if arr.shape != (n,):
        raise ScenarioError(f"{name} needs {n} entries, got {arr.shape}")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} must be finite and nonnegative")
    return arr


def build_scenario(cfg: Mapping[str, Any], n: int, pv_sites: Sequence[int]) -> Scenario:
    """Assemble a :class:`Scenario` from a scenario config section.

    With ``sigma_mode = "relative"`` (default) the per-bus noise std is
    ``sigma * base_load``; with ``"absolute"`` it is ``sigma`` MW everywhere.
    """
    extra = set(cfg) - SCENARIO_FIELDS
    if extra:
        raise ScenarioError(f"unknown scenario fields: {sorted(extra)}")
    T = int(cfg.get("horizon", 1000))
    alpha = float(cfg.get("alpha", 0.1))
    sigma = float(cfg.get("sigma", 0.06))
    seed = int(cfg.get("seed", 0))
    if T < 1:
        raise ScenarioError("horizon must be >= 1")
    if not 0.0 <= alpha <= 1.0:
        raise ScenarioError(f"alpha must lie in [0, 1], got {alpha}")
    if sigma < 0:
        raise ScenarioError("sigma must be nonnegative")
    p0 = _per_bus(cfg.get("base_load_mw", 0.0), n, "base_load_mw")
    q0 = _per_bus(cfg.get("base_load_mvar", 0.0), n, "base_load_mvar")
    mode = cfg.get("sigma_mode", "relative")
    if mode == "relative":
        sig = sigma * np.vstack([p0, q0])
    elif mode == "absolute":
        sig = np.full((2, n), sigma)
    else:
        raise ScenarioError(f"sigma_mode must be 'relative' or 'absolute', got {mode!r}")
    p_l, q_l, clip_rate = generate_loads(n, T, alpha, sig, (p0, q0), seed, return_clip_rate=True)

    pv_cfg = dict(cfg.get("pv", {}))
    extra = set(pv_cfg) - PV_FIELDS
    if extra:
        raise ScenarioError(f"unknown pv fields: {sorted(extra)}")
    sites = [int(s) for s in pv_cfg.get("sites", sorted(pv_sites))]
    sizes = pv_cfg.get("sizes", [0.0] * len(sites))
    if isinstance(sizes, Mapping):
        # {"levels": [small, medium, large]}: random assignment of three ratings
        levels = [float(v) for v in sizes["levels"]]
        size_rng = np.random.default_rng(int(sizes.get("seed", seed)))
        sizes = [levels[i] for i in size_rng.integers(0, len(levels), size=len(sites))]
    pv_avail = generate_pv(
        T, n, sites, [float(s) for s in sizes], pv_cfg.get("events", []),
        int(pv_cfg.get("seed", seed)),
        floor=float(pv_cfg.get("floor", 0.35)), jitter=float(pv_cfg.get("jitter", 0.0)),
    )
    bounds = capacity_bounds(pv_avail, float(cfg.get("reactive_fraction", 0.4)))
    return Scenario(T, p_l, q_l, pv_avail, bounds, alpha, sigma, seed, clip_rate)


def export_scenario_csv(scenario: Scenario, path: str | Path) -> Path:
    """Write one row per step: ``t, p_l_1..n, q_l_1..n, pv_1..n``."""
    path = Path(path)
    n = scenario.n
    header = ["t"] + [f"p_l_{i}" for i in range(1, n + 1)] + [f"q_l_{i}" for i in range(1, n + 1)]
    header += [f"pv_{i}" for i in range(1, n + 1)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(scenario.horizon):
            row = np.concatenate([scenario.p_l[t], scenario.q_l[t], scenario.pv_avail[t]])
            writer.writerow([t] + [repr(float(v)) for v in row])
    return path
