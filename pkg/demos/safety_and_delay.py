"""Walk through the default feeder run: no control versus the learning controller,
then the same controller with communication delay.

    python demos/safety_and_delay.py
"""

from __future__ import annotations

from pathlib import Path

from voltdac.cli import load_config
from voltdac.simulator import build_plant, compute_metrics, run_closed_loop

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "paper_default.json"


def summarize(label, cfg, plant):
    trace = run_closed_loop(cfg, plant)
    m = compute_metrics(trace, limits=cfg.limits)
    print(f"{label:<22} violations {m.violation_count:>6}  avg deviation {m.avg_voltage_deviation:.4f}  "
          f"control cost {m.total_control_cost:8.2f}  worst |x| {abs(trace.x).max():.3f} kV")
    return m


def main() -> None:
    cfg = load_config(CONFIG)
    plant = build_plant(cfg)
    print(f"34-bus feeder, {plant.scenario.horizon} steps, model error {plant.eps_B:.3f} (spectral norm)")
    summarize("no control", cfg.replace(**{"controller.kind": "none"}), plant)
    summarize("direct optimization", cfg.replace(**{"controller.kind": "direct_opt"}), plant)
    summarize("learning controller", cfg, plant)
    for delay in (1, 5, 10):
        summarize(f"  with delay {delay}", cfg.replace(**{"simulation.delay": delay}), plant)


if __name__ == "__main__":
    main()
