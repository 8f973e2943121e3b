"""Sweep the tracing horizon and the load correlation, printing one line per value.

    python demos/sensitivity_sweeps.py
"""

from __future__ import annotations

from pathlib import Path

from voltdac.cli import load_config
from voltdac.simulator import sweep

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def show(axis, rows):
    for value, m in rows:
        print(f"{axis}={value:<5} avg deviation {m.avg_voltage_deviation:.4f}  "
              f"control cost {m.total_control_cost:8.2f}  violations {m.violation_count}")


def main() -> None:
    show("H", sweep(load_config(CONFIGS / "sweep_H.json"), "H", [1, 5, 10], jobs=3))
    show("alpha", sweep(load_config(CONFIGS / "sweep_alpha.json"), "alpha", [0.1, 0.5, 1.0], jobs=3))


if __name__ == "__main__":
    main()
