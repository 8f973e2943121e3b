"""Finite-difference check of the analytic policy gradient on random small instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controller import CostWeights, surrogate_cost_and_gradient


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    worst_point: int
    points: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def random_instance(rng: np.random.Generator, n: int, H: int, margin: float):
    """Random instance whose pre-clip input sits at least ``margin`` inside the box."""
    B = rng.normal(size=(n, 2 * n))
    M = 0.3 * rng.normal(size=(H, 2 * n, n))
    buffer = rng.normal(size=(H, n))
    w_now = rng.normal(size=n)
    u_tilde = np.concatenate([rng.uniform(0.5, 1.5, n), np.zeros(n)])
    weights = CostWeights(*rng.uniform(0.1, 3.0, 3))
    pre = u_tilde + np.einsum("hij,hj->i", M, buffer)
    lo = pre - margin - rng.uniform(0.1, 1.0, 2 * n)
    hi = pre + margin + rng.uniform(0.1, 1.0, 2 * n)
    return M, buffer, w_now, u_tilde, B, weights, lo, hi


def central_difference(M, buffer, w_now, u_tilde, B, weights, lo, hi, step: float) -> np.ndarray:
    out = np.zeros_like(M)
    for idx in np.ndindex(M.shape):
        Mp, Mm = M.copy(), M.copy()
        Mp[idx] += step
        Mm[idx] -= step
        fp, _ = surrogate_cost_and_gradient(Mp, buffer, w_now, u_tilde, B, weights, lo, hi)
        fm, _ = surrogate_cost_and_gradient(Mm, buffer, w_now, u_tilde, B, weights, lo, hi)
        out[idx] = (fp - fm) / (2.0 * step)
    return out


def gradient_check(
    seed: int = 0,
    n: int = 3,
    H: int = 2,
    points: int = 100,
    step: float = 1e-6,
    tolerance: float = 1e-5,
    corrupt: bool = False,
) -> GradCheckResult:
    """Compare analytic and central-difference gradients at ``points`` random instances.

    The relative error of a point is ``|g - g_fd| / max(|g_fd|, 1e-12)`` in
    Frobenius norm. ``corrupt`` perturbs the analytic gradient, as a negative
    control for the checker itself.
    """
    if not 1 <= n <= 5 or not 1 <= H <= 3:
        raise ValueError("gradient check is sized for n <= 5 and H <= 3")
    rng = np.random.default_rng(seed)
    # keep every coordinate well inside the box so the clip never switches
    margin = 10.0 * step
    worst, worst_i = 0.0, 0
    for k in range(points):
        inst = random_instance(rng, n, H, margin)
        _, g = surrogate_cost_and_gradient(*inst)
        if corrupt:
            g = g * 1.01
        g_fd = central_difference(*inst, step=step)
        rel = float(np.linalg.norm(g - g_fd) / max(np.linalg.norm(g_fd), 1e-12))
        if rel > worst:
            worst, worst_i = rel, k
    return GradCheckResult(worst, worst_i, points, tolerance)
