"""Threshold-gated adaptive loss weights.

Each weighted loss component ``i`` carries a weight ``lambda_i``.  At an
update the target ``lambda_hat_i = max|grad L_r| / mean|grad L_i|`` is
computed, forced to zero while ``L_i`` is at or below its threshold, and
blended in with ``lambda_i <- (1 - alpha) lambda_i + alpha lambda_hat_i``.
Components that have converged therefore stop pulling the optimizer away
from the PDE residual, and jump back as soon as they drift out again.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

DEFAULT_THRESHOLD = 1e-5


def compute_lambda_hat(grad_r: np.ndarray, grad_i: np.ndarray) -> float:
    """``max|grad_r| / mean|grad_i|``; zero when ``grad_i`` vanishes."""
    grad_r = np.asarray(grad_r, dtype=float)
    grad_i = np.asarray(grad_i, dtype=float)
    if grad_r.shape != grad_i.shape:
        raise ValueError("gradients must be taken with respect to the same parameters")
    denom = np.mean(np.abs(grad_i))
    if denom == 0.0:
        return 0.0
    return float(np.max(np.abs(grad_r)) / denom)


@dataclass
class AnnealingState:
    lambdas: dict[str, float]
    thresholds: dict[str, float] = field(default_factory=dict)
    alpha: float = 0.1
    history: deque = field(default_factory=lambda: deque(maxlen=256))
    last_hat: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        for name in self.lambdas:
            self.thresholds.setdefault(name, DEFAULT_THRESHOLD)
        if any(v < 0 for v in self.lambdas.values()):
            raise ValueError("loss weights must be nonnegative")

    @classmethod
    def initial(cls, components, thresholds: dict | None = None, alpha: float = 0.1,
                default_threshold: float = DEFAULT_THRESHOLD) -> "AnnealingState":
        """Every weight starts at 1."""
        names = [c for c in components if c != "residual"]
        th = {c: default_threshold for c in names}
        th.update(thresholds or {})
        return cls({c: 1.0 for c in names}, th, alpha)

    def update(self, losses: dict[str, float], grads: dict[str, np.ndarray],
               grad_residual: np.ndarray) -> "AnnealingState":
        """One annealing step in place; returns ``self`` for chaining."""
        hats = {}
        for name, lam in self.lambdas.items():
            if name not in losses or name not in grads:
                raise KeyError(f"annealing update is missing loss or gradient for {name!r}")
            if losses[name] <= self.thresholds[name]:
                hat = 0.0
            else:
                hat = compute_lambda_hat(grad_residual, grads[name])
            hats[name] = hat
            self.lambdas[name] = (1.0 - self.alpha) * lam + self.alpha * hat
        self.last_hat = hats
        self.history.append(dict(self.lambdas))
        return self


def update(state: AnnealingState, losses, grads, grad_residual) -> AnnealingState:
    return state.update(losses, grads, grad_residual)
