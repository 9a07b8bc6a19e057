"""Decoupled-weight-decay optimizers, multi-step schedule and EMA teacher update."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ModelState:
    """Flat parameters, gradients and optimizer slots for one network."""

    params: np.ndarray
    grads: np.ndarray | None = None
    slots: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.grads is None:
            self.grads = np.zeros_like(self.params)

    def check(self) -> None:
        if self.grads.shape != self.params.shape:
            raise ValueError("gradient and parameter shapes differ")
        if not np.all(np.isfinite(self.params)):
            raise FloatingPointError("non-finite parameters")


def sgdw_step(state: ModelState, lr: float, momentum: float = 0.9, weight_decay: float = 0.01) -> None:
    buf = state.slots.setdefault("momentum", np.zeros_like(state.params))
    buf *= momentum
    buf += state.grads
    state.params -= lr * buf + lr * weight_decay * state.params
    state.step += 1
    state.check()


def adamw_step(state: ModelState, lr: float, weight_decay: float = 0.01, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> None:
    m = state.slots.setdefault("m", np.zeros_like(state.params))
    v = state.slots.setdefault("v", np.zeros_like(state.params))
    state.step += 1
    t = state.step
    g = state.grads
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    state.params -= lr * (m_hat / (np.sqrt(v_hat) + eps)) + lr * weight_decay * state.params
    state.check()


def multistep_lr(epoch: int, base_lr: float = 1e-3, milestones=(60, 80), factor: float = 0.1) -> float:
    return base_lr * factor ** sum(epoch >= m for m in milestones)


def ema_update(teacher: np.ndarray, student: np.ndarray, alpha: float) -> np.ndarray:
    """``(1 - alpha) * teacher + alpha * student``; alpha weights the student."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    return (1.0 - alpha) * teacher + alpha * student
