"""Closed-form stability and robustness bounds for the controller.

All functions here are pure. They follow the single-block (``H = 1``)
analysis; for longer horizons the per-block caps decay by ``gamma``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controller import CostWeights
from .grid_model import SensitivityModel, disturbance_from_loads, model_error
from .scenario import Scenario


class PreconditionError(ValueError):
    """A bound was requested outside the regime where it is valid."""


@dataclass(frozen=True)
class TheoryConstants:
    W: float  # max disturbance norm
    U_tilde: float  # max natural-input norm
    kappa_B: float  # ||B||
    eps_B: float  # ||B - B_hat||
    L: float  # Lipschitz constant of the cost on the bounded region
    D: float  # bound on ||x|| and ||u||
    d: int  # problem dimension

    @classmethod
    def derive(cls, W: float, U_tilde: float, kappa_B: float, eps_B: float, L: float, n: int) -> "TheoryConstants":
        D = max(2.0 * U_tilde, kappa_B * U_tilde + W)
        return cls(W, U_tilde, kappa_B, eps_B, L, D, 2 * n)


def lipschitz_constant(weights: CostWeights) -> float:
    """``L`` such that ``|grad_x C|, |grad_u C| <= L * D`` whenever ``|x|, |u| <= D``.

    ``grad_x = 2 c_x x`` gives ``2 c_x D``. ``grad_u = 2 diag(c) (u - u_tilde)``
    with ``|u_tilde| <= D / 2`` gives ``3 max(c_p, c_q) D``.
    """
    return max(2.0 * weights.c_x, 3.0 * max(weights.c_p, weights.c_q))


def stability_learning_rate(c: TheoryConstants) -> float:
    """Largest step size with guaranteed bounded input variation."""
    spread = c.eps_B * c.U_tilde + c.W
    denom = c.L * c.D * c.d * (1.0 + c.kappa_B) * spread**2
    if denom == 0.0:
        raise ZeroDivisionError("learning-rate bound undefined (zero denominator)")
    return 2.0 * c.U_tilde / denom


def init_param_caps(c: TheoryConstants, gamma: float, H: int) -> list[float]:
    """Norm caps for the initial parameter blocks, decaying by ``gamma``."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    if H < 1:
        raise ValueError("H must be >= 1")
    spread = c.eps_B * c.U_tilde + c.W
    if spread == 0.0:
        raise ZeroDivisionError("initialization cap undefined when W + eps_B * U_tilde = 0")
    base = 2.0 * c.U_tilde / spread
    return [base * gamma**i for i in range(1, H + 1)]


def gradient_norm_bound(c: TheoryConstants) -> float:
    """Bound on the Frobenius norm of the policy gradient (exact model)."""
    value = c.L * c.D * c.W * c.d * (1.0 + c.kappa_B)
    if not math.isfinite(value):
        raise ValueError("nonfinite constants")
    return value


def degradation_envelope(
    c: TheoryConstants, M_bar: float, T: int, delta_u1: float | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Per-step caps on the input and state gaps between exact and estimated models.

    Returns ``(Y, X)`` where ``Y[t-1]`` bounds ``|u_t - u'_t|`` for
    ``t = 1..T`` and ``X[t-1] = kappa_B * Y[t-1]`` bounds ``|x_{t+1} - x'_{t+1}|``.
    ``delta_u1`` defaults to its worst case ``M_bar * U_tilde * eps_B``.
    """
    if c.eps_B * c.U_tilde > c.W:
        raise PreconditionError("model error exceeds W / U_tilde")
    if M_bar < 0 or T < 1:
        raise ValueError("need M_bar >= 0 and T >= 1")
    if delta_u1 is None:
        delta_u1 = M_bar * c.U_tilde * c.eps_B
    rate = M_bar * (c.kappa_B + c.eps_B)
    with np.errstate(over="ignore"):  # a growing envelope saturates at U_tilde below
        Y = rate ** np.arange(T, dtype=float) * delta_u1
    if rate > 1.0:
        Y = np.minimum(Y, c.U_tilde)
    return Y, c.kappa_B * Y


def estimate_constants(
    scenario: Scenario,
    model: SensitivityModel,
    eps_B: float | SensitivityModel = 0.0,
    weights: CostWeights = CostWeights(),
) -> TheoryConstants:
    """Constants of a scenario on the true model.

    ``eps_B`` may be given directly or as the estimated model, in which case
    the spectral-norm error is measured.
    """
    if scenario.horizon < 1:
        raise ValueError("empty scenario")
    if isinstance(eps_B, SensitivityModel):
        eps_B = model_error(model, eps_B)[0]
    w = disturbance_from_loads(model, scenario.p_l, scenario.q_l)
    W = float(np.max(np.linalg.norm(w, axis=1)))
    U = float(np.max(np.linalg.norm(scenario.pv_avail, axis=1)))
    return TheoryConstants.derive(W, U, model.kappa, float(eps_B), lipschitz_constant(weights), model.n)
