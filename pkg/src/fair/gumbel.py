"""Relaxed Bernoulli gates ``a_j = V_tau(u_j, w_j)`` and temperature annealing.

``V_tau(u, w) = 1 / (1 + exp((logit(u) - w) / tau))`` approaches the hard gate
``1{logit(u) < w}`` as ``tau -> 0`` while staying differentiable in ``w``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logit


@dataclass
class GateState:
    logits: np.ndarray
    tau: float

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("gate logits must be finite")

    @property
    def dim(self) -> int:
        return self.logits.shape[0]


@dataclass(frozen=True)
class AnnealSchedule:
    tau0: float = 0.5
    tauT: float = 0.05
    total_steps: int = 1

    def __post_init__(self):
        if not (self.tau0 >= self.tauT > 0):
            raise ValueError("need tau0 >= tauT > 0")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")


def anneal_tau(schedule: AnnealSchedule, t: int) -> float:
    """Geometric interpolation ``tau0 * (tauT / tau0) ** (t / T)``; clamps past ``T``."""
    if t < 0:
        raise ValueError("step index must be nonnegative")
    frac = min(t, schedule.total_steps) / schedule.total_steps
    return schedule.tau0 * (schedule.tauT / schedule.tau0) ** frac


def _check_uniforms(u) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0.0) or np.any(u >= 1.0):
        raise ValueError("uniforms must lie strictly inside (0, 1)")
    return u


def gate_values(logits, tau: float, u) -> np.ndarray:
    return expit((np.asarray(logits) - logit(_check_uniforms(u))) / tau)


def gate_sample(state: GateState, uniforms) -> np.ndarray:
    return gate_values(state.logits, state.tau, uniforms)


def gate_grad(state: GateState, uniforms) -> np.ndarray:
    """Diagonal of ``da/dw``: ``a (1 - a) / tau``."""
    a = gate_sample(state, uniforms)
    return a * (1.0 - a) / state.tau


def gate_probs(state: GateState) -> np.ndarray:
    return expit(state.logits)


def draw_uniforms(rng: np.random.Generator, size) -> np.ndarray:
    """Uniforms on the open interval (0, 1); ``Generator.random`` can return 0.0."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / 2.0**53
