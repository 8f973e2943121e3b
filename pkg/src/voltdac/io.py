"""File outputs: trace and sweep CSVs, metrics JSON and run manifests.

Floats are written with ``repr`` so a CSV round-trips exactly and two runs
of the same config produce identical bytes.
"""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .simulator import Metrics, SimulationTrace


def _fmt(v: Any) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write ``text`` to a temp file in the same directory, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def trace_header(n: int, H: int) -> list[str]:
    cols = ["t"]
    for name in ("x", "p", "q", "w", "w_hat"):
        cols += [f"{name}_{i}" for i in range(1, n + 1)]
    cols += ["curtail_cost", "reactive_cost", "voltage_cost"]
    cols += [f"M_norm_{i}" for i in range(1, H + 1)]
    return cols


def trace_to_csv(trace: SimulationTrace) -> str:
    """One row per step, in :func:`trace_header` order."""
    n, H = trace.n, trace.m_norms.shape[1]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trace_header(n, H))
    for t in range(trace.steps):
        row = np.concatenate([
            trace.x[t], trace.u[t, :n], trace.u[t, n:], trace.w[t], trace.w_hat[t],
            [trace.curtail_cost[t], trace.reactive_cost[t], trace.voltage_cost[t]], trace.m_norms[t],
        ])
        writer.writerow([str(t)] + [repr(float(v)) for v in row])
    return buf.getvalue()


def write_trace_csv(trace: SimulationTrace, path: str | Path) -> Path:
    return atomic_write_text(path, trace_to_csv(trace))


def read_trace_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


SWEEP_COLUMNS = (
    "avg_voltage_deviation", "total_control_cost", "total_cost", "violation_steps",
    "violation_count", "max_violation", "steps", "diverged",
)


def sweep_to_csv(axis: str, rows: Sequence[tuple[Any, Metrics]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([axis, *SWEEP_COLUMNS, "mean_fluctuation_std"])
    for value, m in rows:
        cells = [_fmt(getattr(m, k)) for k in SWEEP_COLUMNS]
        writer.writerow([_fmt(value), *cells, repr(float(np.mean(m.fluctuation_std)))])
    return buf.getvalue()


def metrics_to_dict(m: Metrics) -> dict:
    d = dict(m.__dict__)
    # NaN is not valid JSON; a constant bus has no defined ratio
    d["fluctuation_ratio"] = [None if np.isnan(v) else v for v in m.fluctuation_ratio]
    return d


def write_json(path: str | Path, payload: Mapping[str, Any]) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n")


def write_manifest(
    out_dir: str | Path,
    command: str,
    config: Mapping[str, Any] | None,
    outputs: Iterable[str | Path],
    duration_s: float,
    version: str,
    **extra: Any,
) -> Path:
    """``manifest.json`` next to the outputs; always written last and atomically."""
    payload = {
        "command": command,
        "tool_version": version,
        "config": config,
        "outputs": [str(Path(p).name) for p in outputs],
        "wall_time_s": duration_s,
        **extra,
    }
    return write_json(Path(out_dir) / "manifest.json", payload)
