from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NonFiniteGradientError
from .model import ModelParams


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    decay_point: float = 0.8  # fraction of training after which lr /= 10

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")

    def lr_at(self, progress: float) -> float:
        return self.learning_rate * (0.1 if progress >= self.decay_point else 1.0)


def adam_step(params: ModelParams, grads: dict, cfg: OptimizerConfig, progress: float) -> ModelParams:
    """One bias-corrected Adam update, in place. Returns ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
    lr = cfg.lr_at(progress)
    t = params.step + 1
    c1 = 1.0 - cfg.beta1 ** t
    c2 = 1.0 - cfg.beta2 ** t
    for name, w in params.weights.items():
        g = grads[name]
        m = params.m[name]
        v = params.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        w -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.epsilon)
    params.step = t
    return params
