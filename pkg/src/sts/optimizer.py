"""Adam with decoupled weight decay, specialized to tiny coefficient arrays.

The step is a pure function: it returns a new coefficient array and a new
state without touching its inputs, which keeps episodes trivially
replayable. The learning rate drops by lr_decay_factor after the first
step and then stays flat.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    steps: int = 1
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        def bad(name, ok):
            if not ok:
                raise ValidationError(f"invalid optimizer config: {name}={getattr(self, name)!r}")
        bad("lr", isinstance(self.lr, (int, float)) and math.isfinite(self.lr) and self.lr > 0)
        bad("beta1", isinstance(self.beta1, float) and 0.0 <= self.beta1 < 1.0)
        bad("beta2", isinstance(self.beta2, float) and 0.0 <= self.beta2 < 1.0)
        bad("eps", isinstance(self.eps, float) and math.isfinite(self.eps) and self.eps > 0)
        bad("weight_decay", isinstance(self.weight_decay, (int, float))
            and math.isfinite(self.weight_decay) and self.weight_decay >= 0)
        bad("steps", isinstance(self.steps, int) and self.steps >= 0)
        bad("lr_decay_factor", isinstance(self.lr_decay_factor, (int, float))
            and math.isfinite(self.lr_decay_factor) and self.lr_decay_factor > 0)


@dataclass(frozen=True)
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int

    @classmethod
    def fresh(cls, shape) -> "OptimizerState":
        return cls(m=np.zeros(shape), v=np.zeros(shape), t=0)


def effective_lr(config: OptimizerConfig, t: int) -> float:
    """Learning rate used for the step taken from state counter t."""
    return config.lr if t == 0 else config.lr * config.lr_decay_factor


def step(gamma: np.ndarray, grad: np.ndarray, state: OptimizerState,
         config: OptimizerConfig) -> tuple[np.ndarray, OptimizerState]:
    """One update. Returns (new_gamma, new_state); nothing is mutated."""
    gamma = np.asarray(gamma, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if gamma.shape != grad.shape:
        raise ValidationError(
            f"gradient shape {grad.shape} does not match coefficients {gamma.shape}")
    if state.m.shape != gamma.shape or state.v.shape != gamma.shape:
        raise ValidationError(
            f"optimizer state shape {state.m.shape} does not match coefficients {gamma.shape}")
    if not np.all(np.isfinite(grad)):
        raise ValidationError("gradient contains non-finite entries")

    t_new = state.t + 1
    m = config.beta1 * state.m + (1.0 - config.beta1) * grad
    v = config.beta2 * state.v + (1.0 - config.beta2) * grad ** 2
    m_hat = m / (1.0 - config.beta1 ** t_new)
    v_hat = v / (1.0 - config.beta2 ** t_new)
    lr = effective_lr(config, state.t)
    new_gamma = gamma - lr * (m_hat / (np.sqrt(v_hat) + config.eps)
                              + config.weight_decay * gamma)
    return new_gamma, OptimizerState(m=m, v=v, t=t_new)
