from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from voltdac.cli import load_config
from voltdac.grid_model import build_network, compute_sensitivity, load_network, perturb_model
from voltdac.scenario import build_scenario
from voltdac.simulator import Plant

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


def chain_spec(n: int, r: float = 0.5, x: float = 1.0, v0: float = 11.0, pv=None) -> dict:
    return {
        "v0_kv": v0,
        "buses": list(range(n + 1)),
        "lines": [{"from": i, "to": i + 1, "r_ohm": r, "x_ohm": x} for i in range(n)],
        "pv_sites": list(pv if pv is not None else range(1, n + 1)),
    }


def random_tree_spec(rng: np.random.Generator, n: int, v0: float = 1.0, single_feeder: bool = False) -> dict:
    """Random radial network: bus k attaches to a uniformly chosen earlier bus.

    With ``single_feeder`` only bus 1 touches the slack bus, as on a real feeder.
    """
    lines = [
        {"from": int(rng.integers(1 if single_feeder and k > 1 else 0, k)), "to": k, "r_ohm": float(rng.uniform(0.05, 1.0)),
         "x_ohm": float(rng.uniform(0.05, 1.0))}
        for k in range(1, n + 1)
    ]
    return {"v0_kv": v0, "buses": list(range(n + 1)), "lines": lines, "pv_sites": list(range(1, n + 1))}


def random_plant(seed: int, horizon: int = 200, scaling=(0.9, 1.1)) -> Plant:
    """Small random feeder with PV at every bus and a mildly perturbed estimate."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    B = compute_sensitivity(build_network(random_tree_spec(rng, n)))
    sc = build_scenario({
        "horizon": horizon, "alpha": float(rng.uniform(0.05, 1.0)), "seed": seed,
        "base_load_mw": rng.uniform(0.05, 0.3, n).tolist(), "base_load_mvar": rng.uniform(0.02, 0.1, n).tolist(),
        "pv": {"sizes": rng.uniform(0.2, 1.0, n).tolist(), "events": []},
    }, n, list(range(1, n + 1)))
    return Plant(B, perturb_model(B, scaling, 0, seed=seed), sc)


@pytest.fixture(scope="session")
def feeder():
    return load_network("feeder34")


@pytest.fixture(scope="session")
def feeder_model(feeder):
    return compute_sensitivity(feeder)


@pytest.fixture(scope="session")
def paper_config():
    return load_config(CONFIGS / "paper_default.json")


@pytest.fixture
def small_model():
    return compute_sensitivity(build_network(chain_spec(3, v0=1.0)))


ACCEPTANCE: dict[int, str] = {}


def record(k: int, passed: bool, detail: str) -> bool:
    """Store and print one acceptance line; returns ``passed`` for the assert."""
    line = f"criterion {k:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[k] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
