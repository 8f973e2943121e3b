"""Radial network description and its linearized voltage-sensitivity model.

Voltages are in kV, powers in MW/MVar and impedances in ohm, so that
``R @ p / v0`` is directly a voltage change in kV.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np

NETWORK_FIELDS = {"name", "notes", "v0_kv", "buses", "lines", "pv_sites"}
LINE_FIELDS = {"from", "to", "r_ohm", "x_ohm"}
BUNDLED_NETWORKS = {"feeder34": "feeder34.json"}


class NetworkError(ValueError):
    """Raised when a network description is not a valid radial feeder."""


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r_ohm: float
    x_ohm: float


@dataclass(frozen=True)
class NetworkModel:
    """Radial feeder rooted at slack bus 0 with non-slack buses ``1..n``."""

    n: int
    lines: tuple[Line, ...]
    v0_kv: float
    pv_sites: frozenset[int]
    name: str = ""

    @property
    def pv_index(self) -> np.ndarray:
        """Zero-based positions of PV buses in bus vectors."""
        return np.array(sorted(b - 1 for b in self.pv_sites), dtype=int)

    def with_impedance_scale(self, factors: np.ndarray) -> "NetworkModel":
        factors = np.asarray(factors, dtype=float)
        if factors.shape != (len(self.lines),):
            raise ValueError("need one scale factor per line")
        lines = tuple(
            Line(ln.from_bus, ln.to_bus, ln.r_ohm * f, ln.x_ohm * f)
            for ln, f in zip(self.lines, factors)
        )
        return NetworkModel(self.n, lines, self.v0_kv, self.pv_sites, self.name)


def _find(parent: list[int], a: int) -> int:
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def build_network(spec: Mapping[str, Any]) -> NetworkModel:
    """Validate a network description and return a :class:`NetworkModel`.

    ``spec`` follows the network file schema: ``v0_kv``, ``buses`` (ids
    ``0..n`` with 0 the slack bus), ``lines`` (list of ``{from, to, r_ohm,
    x_ohm}``) and ``pv_sites``. Unknown fields are rejected.
    """
    unknown = set(spec) - NETWORK_FIELDS
    if unknown:
        raise NetworkError(f"unknown network fields: {sorted(unknown)}")
    for key in ("v0_kv", "buses", "lines"):
        if key not in spec:
            raise NetworkError(f"missing network field {key!r}")

    v0 = float(spec["v0_kv"])
    if not np.isfinite(v0) or v0 <= 0:
        raise NetworkError("v0_kv must be positive")

    buses = [int(b) for b in spec["buses"]]
    if sorted(buses) != list(range(len(buses))) or len(buses) < 2:
        raise NetworkError("buses must be the ids 0..n with n >= 1")
    n = len(buses) - 1

    lines: list[Line] = []
    seen: set[frozenset[int]] = set()
    parent = list(range(n + 1))
    for raw in spec["lines"]:
        extra = set(raw) - LINE_FIELDS
        if extra:
            raise NetworkError(f"unknown line fields: {sorted(extra)}")
        missing = LINE_FIELDS - set(raw)
        if missing:
            raise NetworkError(f"line missing fields: {sorted(missing)}")
        a, b = int(raw["from"]), int(raw["to"])
        r, x = float(raw["r_ohm"]), float(raw["x_ohm"])
        if not (0 <= a <= n and 0 <= b <= n) or a == b:
            raise NetworkError(f"line {a}-{b} references an invalid bus")
        key = frozenset((a, b))
        if key in seen:
            raise NetworkError(f"duplicate line {a}-{b}")
        seen.add(key)
        if not (np.isfinite(r) and np.isfinite(x)) or r < 0 or x < 0 or r + x <= 0:
            raise NetworkError(f"nonpositive impedance on line {a}-{b}")
        ra, rb = _find(parent, a), _find(parent, b)
        if ra == rb:
            raise NetworkError(f"cycle detected at line {a}-{b}")
        parent[ra] = rb
        lines.append(Line(a, b, r, x))

    root = _find(parent, 0)
    cut = [b for b in range(1, n + 1) if _find(parent, b) != root]
    if cut:
        raise NetworkError(f"disconnected buses: {cut}")

    pv = frozenset(int(b) for b in spec.get("pv_sites", []))
    if not pv <= set(range(1, n + 1)):
        raise NetworkError("pv_sites must be non-slack bus ids")

    return NetworkModel(n, tuple(lines), v0, pv, str(spec.get("name", "")))


def load_network(source: str | Path) -> NetworkModel:
    """Load a network file, or a bundled feeder by name (e.g. ``"feeder34"``)."""
    if str(source) in BUNDLED_NETWORKS:
        text = resources.files("voltdac.data").joinpath(BUNDLED_NETWORKS[str(source)]).read_text()
    else:
        text = Path(source).read_text()
    return build_network(json.loads(text))


def spectral_norm(A: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of ``A`` by power iteration on ``A.T @ A``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        return 0.0
    G = A.T @ A
    v = np.ones(G.shape[0]) + np.linspace(0.0, 1e-3, G.shape[0])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        z = G @ v
        nz = np.linalg.norm(z)
        if nz == 0.0:
            # starting vector in the null space; restart on a coordinate axis
            v = np.eye(G.shape[0])[int(np.argmax(np.abs(G).sum(axis=0)))]
            continue
        v = z / nz
        lam_new = float(v @ G @ v)
        if abs(lam_new - lam) <= tol * max(lam_new, 1.0):
            lam = lam_new
            break
        lam = lam_new
    return float(np.sqrt(max(lam, 0.0)))


@dataclass(frozen=True, eq=False)
class SensitivityModel:
    """Linear map from injections ``u = [p; q]`` to voltage deviations.

    ``B = [R, X] / v0`` so that ``x_{t+1} = B u_t + w_t``.
    """

    R: np.ndarray
    X: np.ndarray
    v0: float
    provenance: Mapping[str, Any] = field(default_factory=lambda: {"kind": "true"})
    network: NetworkModel | None = None
    B: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        R = np.asarray(self.R, dtype=float)
        X = np.asarray(self.X, dtype=float)
        if R.shape != X.shape or R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("R and X must be square matrices of equal size")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "B", np.hstack([R, X]) / self.v0)

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def kappa(self) -> float:
        return spectral_norm(self.B)

    @property
    def is_true(self) -> bool:
        return self.provenance.get("kind") == "true"


def compute_sensitivity(net: NetworkModel) -> SensitivityModel:
    """Reduce the nodal admittance to non-slack buses and invert it."""
    n = net.n
    Y = np.zeros((n + 1, n + 1), dtype=complex)
    for ln in net.lines:
        y = 1.0 / complex(ln.r_ohm, ln.x_ohm)
        a, b = ln.from_bus, ln.to_bus
        Y[a, a] += y
        Y[b, b] += y
        Y[a, b] -= y
        Y[b, a] -= y
    Yr = Y[1:, 1:]
    try:
        Z = np.linalg.solve(Yr, np.eye(n, dtype=complex))
    except np.linalg.LinAlgError as exc:
        raise RuntimeError("reduced admittance is singular") from exc
    R = 0.5 * (Z.real + Z.real.T)
    X = 0.5 * (Z.imag + Z.imag.T)
    return SensitivityModel(R, X, net.v0_kv, {"kind": "true"}, net)


def _check_dims(model: SensitivityModel, **vectors: np.ndarray) -> None:
    for name, (vec, size) in vectors.items():
        if np.shape(vec) != (size,):
            raise ValueError(f"{name} has shape {np.shape(vec)}, expected ({size},)")


def voltage_step(model: SensitivityModel, u: np.ndarray, w: np.ndarray) -> np.ndarray:
    """One step of the linear voltage dynamics, ``x = B u + w``."""
    n = model.n
    _check_dims(model, u=(u, 2 * n), w=(w, n))
    return model.B @ u + w


def disturbance_from_loads(model: SensitivityModel, p_l: np.ndarray, q_l: np.ndarray) -> np.ndarray:
    """Voltage drop caused by uncontrollable loads, ``-(R p + X q) / v0``.

    Accepts single vectors or ``T x n`` stacks of them.
    """
    p_l = np.asarray(p_l, dtype=float)
    q_l = np.asarray(q_l, dtype=float)
    if p_l.shape != q_l.shape or p_l.shape[-1] != model.n:
        raise ValueError("load vectors must have trailing dimension n")
    return -(p_l @ model.R.T + q_l @ model.X.T) / model.v0


def model_error(true: SensitivityModel, estimate: SensitivityModel) -> tuple[float, float]:
    """Return ``(||B - B_hat||, ||B - B_hat|| / ||B||)`` in spectral norm."""
    eps = spectral_norm(true.B - estimate.B)
    return eps, eps / true.kappa


def perturb_model(
    model: SensitivityModel,
    scaling_range: tuple[float, float] = (0.8, 1.2),
    n_permuted: int = 4,
    seed: int = 0,
) -> SensitivityModel:
    """Build an inaccurate estimate of ``model``.

    Every line impedance is scaled by an independent uniform factor from
    ``scaling_range``; then ``n_permuted`` randomly chosen buses swap labels
    (cyclically, so each of them moves) in both rows and columns.
    """
    if not model.is_true or model.network is None:
        raise ValueError("perturb_model needs the true model built from a network")
    lo, hi = float(scaling_range[0]), float(scaling_range[1])
    if not (0 < lo <= hi):
        raise ValueError(f"invalid scaling range [{lo}, {hi}]")
    n = model.n
    if not 0 <= n_permuted <= n:
        raise ValueError(f"n_permuted must lie in [0, {n}]")

    rng = np.random.default_rng(seed)
    net = model.network
    factors = rng.uniform(lo, hi, size=len(net.lines))
    scaled = compute_sensitivity(net.with_impedance_scale(factors))

    perm = np.arange(n)
    chosen = np.sort(rng.choice(n, size=n_permuted, replace=False)) if n_permuted else np.array([], int)
    if n_permuted >= 2:
        order = rng.permutation(chosen)
        perm[order] = np.roll(order, 1)
    R_hat = scaled.R[np.ix_(perm, perm)]
    X_hat = scaled.X[np.ix_(perm, perm)]
    provenance = {
        "kind": "perturbed",
        "seed": int(seed),
        "scaling_range": [lo, hi],
        "permuted_buses": [int(b) + 1 for b in chosen],
    }
    return SensitivityModel(R_hat, X_hat, model.v0, provenance, net)
