"""Disturbance-action controller: saturated policy, disturbance reconstruction,
surrogate-cost gradient and the parameter update.

Parameters are stored as an ``(H, 2n, n)`` array; block ``i`` (zero-based)
multiplies the disturbance reconstructed ``i + 1`` steps ago.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid_model import SensitivityModel


@dataclass(frozen=True)
class CostWeights:
    """Weights of ``c_p |p - p_avail|^2 + c_q |q|^2 + c_x |x|^2``."""

    c_p: float = 3.0
    c_q: float = 1.0
    c_x: float = 0.5

    def __post_init__(self) -> None:
        if min(self.c_p, self.c_q, self.c_x) < 0:
            raise ValueError("cost weights must be nonnegative")


def identity_blocks(n: int, p_gain: float, q_gain: float) -> np.ndarray:
    """The ``2n x n`` block ``[p_gain * I; q_gain * I]``."""
    return np.vstack([p_gain * np.eye(n), q_gain * np.eye(n)])


@dataclass
class ControllerState:
    """Mutable controller memory owned by exactly one simulation."""

    M: np.ndarray
    eta: float
    gamma: float = 1.0
    buffer: np.ndarray = field(default=None)  # type: ignore[assignment]
    project: bool = False
    caps: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.M = np.array(self.M, dtype=float)
        if self.M.ndim != 3 or self.M.shape[1] != 2 * self.M.shape[2]:
            raise ValueError("M must have shape (H, 2n, n)")
        if self.buffer is None:
            self.buffer = np.zeros((self.H, self.n))
        self.buffer = np.array(self.buffer, dtype=float)
        if self.buffer.shape != (self.H, self.n):
            raise ValueError("disturbance buffer must have shape (H, n)")

    @property
    def H(self) -> int:
        return self.M.shape[0]

    @property
    def n(self) -> int:
        return self.M.shape[2]

    @classmethod
    def from_gains(
        cls, n: int, H: int, p_gain: float, q_gain: float, eta: float, gamma: float = 1.0, **kw
    ) -> "ControllerState":
        """Blocks ``gamma**i * [p_gain I; q_gain I]`` for ``i = 0..H-1``."""
        base = identity_blocks(n, p_gain, q_gain)
        M = np.stack([gamma**i * base for i in range(H)])
        return cls(M, eta, gamma, **kw)

    def push(self, w_hat: np.ndarray) -> None:
        """Make ``w_hat`` the most recent entry, dropping the oldest."""
        self.buffer = np.roll(self.buffer, 1, axis=0)
        self.buffer[0] = w_hat

    def policy_term(self, M: np.ndarray | None = None, buffer: np.ndarray | None = None) -> np.ndarray:
        M = self.M if M is None else M
        buffer = self.buffer if buffer is None else buffer
        return np.einsum("hij,hj->i", M, buffer)

    def block_norms(self) -> np.ndarray:
        return np.array([np.linalg.norm(Mi, 2) for Mi in self.M])


def compute_input(
    state: ControllerState, u_tilde: np.ndarray, lo: np.ndarray, hi: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Saturated policy output; returns ``(u, pre_clip)``."""
    if np.shape(u_tilde) != (2 * state.n,):
        raise ValueError("u_tilde must have length 2n")
    pre = u_tilde + state.policy_term()
    return np.clip(pre, lo, hi), pre


def estimate_disturbance(x_next: np.ndarray, B_hat: SensitivityModel, u: np.ndarray) -> np.ndarray:
    """Reconstructed disturbance ``x_{t+1} - B_hat u_t``."""
    n = B_hat.n
    if np.shape(x_next) != (n,) or np.shape(u) != (2 * n,):
        raise ValueError("dimension mismatch in disturbance reconstruction")
    return x_next - B_hat.B @ u


def surrogate_cost_and_gradient(
    M: np.ndarray,
    buffer: np.ndarray,
    w_hat_now: np.ndarray,
    u_tilde: np.ndarray,
    B_hat: SensitivityModel | np.ndarray,
    weights: CostWeights,
    lo: np.ndarray,
    hi: np.ndarray,
    pv_avail: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Cost of the saturated policy on the surrogate plant and its gradient in ``M``.

    ``u(M) = clip(u_tilde + sum_i M_i buffer_i)`` and ``x_hat = B_hat u(M) +
    w_hat_now``; buffer entries are constants. Coordinates whose pre-clip
    value is not strictly inside the box contribute no gradient.
    """
    B = B_hat.B if isinstance(B_hat, SensitivityModel) else np.asarray(B_hat)
    M = np.asarray(M, dtype=float)
    H, two_n, n = M.shape
    if B.shape != (n, two_n) or np.shape(buffer) != (H, n) or np.shape(u_tilde) != (two_n,):
        raise ValueError("dimension mismatch in surrogate cost")
    if np.shape(w_hat_now) != (n,):
        raise ValueError("w_hat_now must have length n")
    if min(weights.c_p, weights.c_q, weights.c_x) < 0:
        raise ValueError("cost weights must be nonnegative")
    p_target = u_tilde[:n] if pv_avail is None else np.asarray(pv_avail)

    pre = u_tilde + np.einsum("hij,hj->i", M, buffer)
    u = np.clip(pre, lo, hi)
    x_hat = B @ u + w_hat_now
    dp = u[:n] - p_target
    q = u[n:]
    cost = weights.c_p * dp @ dp + weights.c_q * q @ q + weights.c_x * x_hat @ x_hat

    g_u = 2.0 * np.concatenate([weights.c_p * dp, weights.c_q * q]) + 2.0 * weights.c_x * (B.T @ x_hat)
    g_u = np.where((pre > lo) & (pre < hi), g_u, 0.0)
    grad = g_u[None, :, None] * buffer[:, None, :]
    return float(cost), grad


def project_blocks(M: np.ndarray, caps: np.ndarray) -> np.ndarray:
    """Shrink each block onto the spectral-norm ball of radius ``caps[i]``."""
    out = M.copy()
    for i, cap in enumerate(caps):
        U, s, Vt = np.linalg.svd(out[i], full_matrices=False)
        if s[0] > cap:
            out[i] = (U * np.minimum(s, cap)) @ Vt
    return out


def update_params(state: ControllerState, gradient: np.ndarray, eta: float | None = None) -> ControllerState:
    """One gradient step on every block, optionally followed by projection."""
    eta = state.eta if eta is None else eta
    if eta < 0:
        raise ValueError("learning rate must be nonnegative")
    if not np.all(np.isfinite(gradient)):
        raise FloatingPointError("nonfinite policy gradient")
    state.M = state.M - eta * gradient
    if state.project and state.caps is not None:
        state.M = project_blocks(state.M, state.caps)
    return state
