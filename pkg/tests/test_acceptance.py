"""End-to-end acceptance checks on the bundled 34-bus feeder.

Each test prints one ``criterion k: PASS/FAIL`` line; the lines are repeated
in the terminal summary.
"""

from __future__ import annotations

import subprocess
import sys
import time

import numpy as np
import pytest

from conftest import CONFIGS, random_plant, record
from voltdac.baselines import QpProblem, direct_opt_input, qp_oracle_grid
from voltdac.cli import load_config
from voltdac.controller import CostWeights, surrogate_cost_and_gradient
from voltdac.gradcheck import gradient_check
from voltdac.grid_model import disturbance_from_loads
from voltdac.simulator import (
    Plant,
    SimulationConfig,
    compute_metrics,
    initial_parameters,
    paired_inaccuracy_run,
    run_closed_loop,
    simulate,
    sweep,
)
from voltdac.theory import (
    TheoryConstants,
    degradation_envelope,
    estimate_constants,
    gradient_norm_bound,
    init_param_caps,
    stability_learning_rate,
)

pytestmark = pytest.mark.slow


def metrics(cfg):
    trace = run_closed_loop(cfg)
    return compute_metrics(trace, limits=cfg.limits), trace


@pytest.fixture(scope="module")
def default():
    return load_config(CONFIGS / "paper_default.json")


@pytest.fixture(scope="module")
def default_run(default):
    return metrics(default)


def test_c01_safety_under_control(default, default_run):
    start = time.perf_counter()
    m_dac, _ = metrics(default)
    elapsed = time.perf_counter() - start
    m_none, _ = metrics(default.replace(**{"controller.kind": "none"}))
    ok = m_none.upper_violation_count >= 1 and m_dac.violation_count == 0 and m_dac.steps == 1000 and elapsed < 10
    assert record(1, ok, f"no control: {m_none.upper_violation_count} upper violations; "
                         f"DAC: {m_dac.violation_count} violations over {m_dac.steps} steps in {elapsed:.2f}s")


def test_c02_instability_at_large_step(default_run):
    _, stable = default_run
    m, trace = metrics(load_config(CONFIGS / "unstable_eta.json"))
    frac = float(trace.variation_violations().mean()) if len(trace.variation) else 0.0
    stable_count = int(stable.variation_violations().sum())
    growth = trace.m_norms.max() / trace.m_norms[0].max()
    ok = (m.diverged or frac >= 0.01) and stable_count == 0
    assert record(2, ok, f"eta=1.5e-3: diverged={m.diverged}, variation violations on {100 * frac:.2f}% of steps "
                         f"(M norm grew {growth:.2f}x); eta=5e-4: {stable_count} violating steps")


def test_c03_gradient_check():
    start = time.perf_counter()
    res = gradient_check()
    elapsed = time.perf_counter() - start
    largest = gradient_check(seed=1, n=5, H=3, points=20)
    ok = res.passed and res.points == 100 and elapsed < 5 and largest.passed
    assert record(3, ok, f"max relative error {res.max_rel_error:.2e} over {res.points} points in {elapsed:.2f}s; "
                         f"n=5, H=3: {largest.max_rel_error:.2e}")


def test_c04_theory_formulas():
    def c(W=0.5, U=1.0, kappa=1.0, eps=0.0, L=1.0, D=2.0, d=2):
        return TheoryConstants(W, U, kappa, eps, L, D, d)

    rel = lambda a, b: abs(a - b) <= 1e-12 * abs(b)  # noqa: E731
    Y, X = degradation_envelope(c(kappa=0.4, eps=0.1), 1.0, 8)
    checks = [
        rel(stability_learning_rate(c()), 1.0),
        rel(stability_learning_rate(c(eps=0.5)), 0.25),
        stability_learning_rate(c()) >= stability_learning_rate(c(eps=0.3)),
        rel(init_param_caps(c(W=1.0), 1.0, 1)[0], 2.0),
        all(rel(a, b) for a, b in zip(init_param_caps(c(W=0.5, eps=0.5), 0.5, 2), [1.0, 0.5])),
        rel(gradient_norm_bound(c()), 4.0),
        rel(gradient_norm_bound(c(kappa=0.0)), 1.0 * 2.0 * 0.5 * 2),
        rel(Y[0], 0.1),
        all(rel(y, 0.1 * 0.5**t) for t, y in enumerate(Y)),
        all(rel(x, 0.4 * y) for x, y in zip(X, Y)),
    ]
    assert record(4, all(checks), f"{sum(checks)}/{len(checks)} hand-substituted values within 1e-12 relative")


def gradient_instance(rng):
    """Random exact-model instance inside the bounded region the gradient bound assumes."""
    plant = random_plant(int(rng.integers(1 << 30)), horizon=30)
    sc, B = plant.scenario, plant.true
    weights = CostWeights(*rng.uniform(0.1, 3.0, 3))
    c = estimate_constants(sc, B, 0.0, weights)
    H = int(rng.integers(1, 4))
    caps = init_param_caps(c, 0.5, H)
    n = B.n
    M = np.stack([cap * rng.uniform(0, 1) * (lambda A: A / np.linalg.norm(A, 2))(rng.normal(size=(2 * n, n)))
                  for cap in caps])
    w = disturbance_from_loads(B, sc.p_l, sc.q_l)
    t = int(rng.integers(H, sc.horizon))
    buffer = w[t - H:t][::-1]
    lo, hi = sc.bounds.at(t)
    _, g = surrogate_cost_and_gradient(M, buffer, w[t], sc.natural_input(t), B, weights, lo, hi)
    return float(np.linalg.norm(g)), gradient_norm_bound(c)


def test_c05_gradient_norm_bound():
    rng = np.random.default_rng(5)
    ratios = [g / bound for g, bound in (gradient_instance(rng) for _ in range(1000))]
    worst = max(ratios)
    assert record(5, worst <= 1.0, f"1000 instances, largest gradient norm / bound = {worst:.3e}")


def test_c06_degradation_envelope():
    worst_u = worst_x = 0.0
    ok = True
    base_ctrl = SimulationConfig.from_dict({}).controller
    for k in range(100):
        plant = random_plant(1000 + k)
        c = estimate_constants(plant.scenario, plant.true, plant.estimate)
        assert c.eps_B * c.U_tilde <= c.W
        ctrl = dict(base_ctrl, M0="auto", eta=stability_learning_rate(c))
        M0 = initial_parameters(ctrl, plant.true.n, plant.scenario, plant.true, c.eps_B)
        exact = simulate(Plant(plant.true, plant.true, plant.scenario), ctrl, M0=M0)
        est = simulate(plant, ctrl, M0=M0)
        M_bar = max(exact.m_norms.max(), est.m_norms.max())
        Y, X = degradation_envelope(c, M_bar, plant.scenario.horizon)
        du = np.linalg.norm(exact.u - est.u, axis=1)
        dx = np.linalg.norm(exact.x - est.x, axis=1)
        ok &= bool(np.all(du <= Y + 1e-12) and np.all(dx <= X + 1e-12))
        worst_u = max(worst_u, float(np.max(du / Y)))
        worst_x = max(worst_x, float(np.max(dx / X)))
    assert record(6, ok, f"100 paired runs; max |du|/Y = {worst_u:.3f}, max |dx|/X = {worst_x:.3f}")


def test_c07_robustness_to_model_error():
    pair = load_config(CONFIGS / "inaccuracy_pair.json")
    lines, ok = [], True
    for seed in range(1, 6):
        cfg = pair.replace(**{"scenario.seed": seed})
        dac = paired_inaccuracy_run(cfg)
        opt = paired_inaccuracy_run(cfg.replace(**{"controller.kind": "direct_opt"}))
        viol = [compute_metrics(t, limits=cfg.limits).violation_count for t in (dac.first, dac.second)]
        ok &= dac.spread <= 0.5 * opt.spread and viol == [0, 0]
        lines.append(f"seed {seed}: {dac.spread:.3f}/{opt.spread:.3f} viol {viol}")
    errs = ", ".join(f"{e:.3f}" for e in dac.relative_errors)
    assert record(7, ok, f"relative model errors {errs}; DAC/direct spread per seed: " + "; ".join(lines))


def test_c08_robustness_to_delay(default, default_run):
    base, _ = default_run
    lines, ok = [], True
    for td in (1, 5, 10):
        m, _ = metrics(default.replace(**{"simulation.delay": td}))
        change = m.avg_voltage_deviation / base.avg_voltage_deviation - 1
        ok &= m.violation_count == 0 and abs(change) < 0.10
        lines.append(f"T_d={td}: {m.violation_count} violations, deviation {100 * change:+.1f}%")
    assert record(8, ok, "; ".join(lines))


def test_c09_horizon_sensitivity():
    cfg = load_config(CONFIGS / "sweep_H.json")
    rows = sweep(cfg, "H", [1, 5, 10])
    dev = [m.avg_voltage_deviation for _, m in rows]
    cost = [m.total_control_cost for _, m in rows]
    ok = (all(a >= b for a, b in zip(dev, dev[1:])) and all(a <= b for a, b in zip(cost, cost[1:]))
          and dev[0] > dev[-1] and cost[0] < cost[-1])
    assert record(9, ok, "H=1,5,10 deviation " + ", ".join(f"{d:.4f}" for d in dev)
                  + "; control cost " + ", ".join(f"{c:.2f}" for c in cost))


def test_c10_alpha_sensitivity(default, default_run):
    low, _ = default_run
    high, _ = metrics(default.replace(**{"scenario.alpha": 1.0}))
    change = 100 * (high.avg_voltage_deviation / low.avg_voltage_deviation - 1)
    ok = high.avg_voltage_deviation > low.avg_voltage_deviation
    assert record(10, ok, f"deviation {low.avg_voltage_deviation:.5f} at alpha=0.1, "
                          f"{high.avg_voltage_deviation:.5f} at alpha=1.0 ({change:+.2f}%)")


def fine_grid_optimum(prob: QpProblem) -> float:
    """Coarse grid, then a 5e-3 grid around the coarse winner (the objective is convex)."""
    u0 = qp_oracle_grid(prob, 0.05)
    sub = QpProblem(prob.B_hat, prob.w_hat, prob.u_tilde, np.maximum(prob.lo, u0 - 0.06),
                    np.minimum(prob.hi, u0 + 0.06), prob.weights)
    return float(prob.objective(qp_oracle_grid(sub, 5e-3)))


def test_c11_oracle_equivalence():
    rng = np.random.default_rng(11)
    worst = 0.0
    for k in range(50):
        n = 1 + k % 2
        pbar = rng.uniform(0.1, 1.0, n)
        prob = QpProblem(rng.uniform(0, 1, (n, 2 * n)), rng.normal(scale=0.5, size=n), np.r_[pbar, np.zeros(n)],
                         np.r_[np.zeros(n), -0.4 * pbar], np.r_[pbar, 0.4 * pbar],
                         CostWeights(*rng.uniform(0.1, 3.0, 3)))
        grid = fine_grid_optimum(prob)
        for method in ("pg", "bvls"):
            worst = max(worst, abs(direct_opt_input(prob, method=method).objective - grid))
    assert record(11, worst < 1e-3, f"50 instances, largest objective gap {worst:.2e}")


def test_c12_determinism(tmp_path):
    cfg = CONFIGS / "paper_default.json"
    for name in ("a", "b"):
        subprocess.run([sys.executable, "-m", "voltdac.cli", "simulate", str(cfg), "--out", str(tmp_path / name)],
                       check=True, capture_output=True)
    same = (tmp_path / "a" / "trace.csv").read_bytes() == (tmp_path / "b" / "trace.csv").read_bytes()
    assert record(12, same, "two simulate invocations give " + ("identical" if same else "different") + " trace bytes")
