"""Comparators: no control, and per-step direct optimization of the cost."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import lsq_linear

from .controller import CostWeights
from .grid_model import spectral_norm


@dataclass(frozen=True, eq=False)
class QpProblem:
    """``min c_p|p - p_avail|^2 + c_q|q|^2 + c_x|B_hat u + w_hat|^2`` over a box."""

    B_hat: np.ndarray
    w_hat: np.ndarray
    u_tilde: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    weights: CostWeights = CostWeights()

    def __post_init__(self) -> None:
        n = len(self.w_hat)
        if np.shape(self.B_hat) != (n, 2 * n) or np.shape(self.u_tilde) != (2 * n,):
            raise ValueError("dimension mismatch in QP")
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("empty box: lo > hi")

    @property
    def n(self) -> int:
        return len(self.w_hat)

    def objective(self, u: np.ndarray) -> np.ndarray:
        """Objective at ``u``; a ``k x 2n`` stack gives ``k`` values."""
        u = np.asarray(u, dtype=float)
        n, c = self.n, self.weights
        dev = u - self.u_tilde
        x = u @ self.B_hat.T + self.w_hat
        return (
            c.c_p * np.sum(dev[..., :n] ** 2, axis=-1)
            + c.c_q * np.sum(u[..., n:] ** 2, axis=-1)
            + c.c_x * np.sum(x**2, axis=-1)
        )

    def gradient(self, u: np.ndarray) -> np.ndarray:
        n, c = self.n, self.weights
        scale = np.concatenate([np.full(n, c.c_p), np.full(n, c.c_q)])
        # u_tilde has a zero q-part, so u - u_tilde covers both penalties
        x = self.B_hat @ u + self.w_hat
        return 2.0 * scale * (u - self.u_tilde) + 2.0 * c.c_x * self.B_hat.T @ x

    def smoothness(self) -> float:
        c = self.weights
        return 2.0 * (max(c.c_p, c.c_q) + c.c_x * spectral_norm(self.B_hat) ** 2)


@dataclass(frozen=True, eq=False)
class QpResult:
    u: np.ndarray
    converged: bool
    iterations: int
    objective: float


def no_control_input(u_tilde: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Full available active power, no reactive power."""
    return np.clip(u_tilde, lo, hi)


def direct_opt_input(
    problem: QpProblem,
    tol: float = 1e-8,
    max_iter: int = 20_000,
    u0: np.ndarray | None = None,
    step: float | None = None,
    method: str = "pg",
) -> QpResult:
    """Minimize the one-step cost over the box.

    ``method="pg"``: projected gradient with fixed step ``1 / smoothness``,
    stopping when the gradient mapping norm drops below ``tol``; ``u0`` warm
    starts it. ``method="bvls"``: the same problem written as bounded least
    squares and handed to scipy (exact active-set solve, much faster on
    ill-conditioned feeders).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if method == "bvls":
        return _solve_bvls(problem, tol, max_iter)
    if method != "pg":
        raise ValueError(f"unknown method {method!r}")
    lo, hi = problem.lo, problem.hi
    lip = problem.smoothness() if step is None else 1.0 / step
    u = np.clip(problem.u_tilde if u0 is None else u0, lo, hi)
    if lip == 0.0:
        return QpResult(u, True, 0, float(problem.objective(u)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u_next = np.clip(u - problem.gradient(u) / lip, lo, hi)
        mapping = lip * np.linalg.norm(u_next - u)
        u = u_next
        if mapping < tol:
            converged = True
            break
    return QpResult(u, converged, it, float(problem.objective(u)))


def _solve_bvls(problem: QpProblem, tol: float, max_iter: int) -> QpResult:
    n, c = problem.n, problem.weights
    scale = np.sqrt(np.concatenate([np.full(n, c.c_p), np.full(n, c.c_q)]))
    A = np.vstack([np.diag(scale), np.sqrt(c.c_x) * problem.B_hat])
    b = np.concatenate([scale * problem.u_tilde, -np.sqrt(c.c_x) * problem.w_hat])
    lo, hi = np.asarray(problem.lo, float), np.asarray(problem.hi, float)
    fixed = lo == hi  # scipy wants strictly ordered bounds
    u = lo.copy()
    free = ~fixed
    if free.any():
        res = lsq_linear(A[:, free], b - A[:, fixed] @ lo[fixed], bounds=(lo[free], hi[free]),
                         method="bvls", tol=min(tol, 1e-10), max_iter=max_iter)
        u[free] = np.clip(res.x, lo[free], hi[free])
        converged, it = bool(res.status > 0), int(res.nit)
    else:
        converged, it = True, 0
    return QpResult(u, converged, it, float(problem.objective(u)))


def qp_oracle_grid(problem: QpProblem, resolution: float, max_points: int = 10_000_000) -> np.ndarray:
    """Exhaustive minimizer over a regular grid of the box (small problems only)."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    axes = []
    for a, b in zip(problem.lo, problem.hi):
        k = int(np.floor((b - a) / resolution + 1e-9))
        pts = a + resolution * np.arange(k + 1)
        if pts[-1] < b:
            pts = np.append(pts, b)
        axes.append(pts)
    total = int(np.prod([len(ax) for ax in axes], dtype=float))
    if total > max_points:
        raise ValueError(f"grid of {total} points exceeds {max_points}")

    best_val, best_u = np.inf, None
    sizes = [len(ax) for ax in axes]
    chunk = 200_000
    for start in range(0, total, chunk):
        idx = np.arange(start, min(start + chunk, total))
        multi = np.unravel_index(idx, sizes)
        U = np.column_stack([ax[m] for ax, m in zip(axes, multi)])
        vals = problem.objective(U)
        k = int(np.argmin(vals))
        if vals[k] < best_val:
            best_val, best_u = vals[k], U[k]
    return np.asarray(best_u)
