"""Adam with per-epoch exponential learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


@dataclass
class AdamState:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    decay: float = 0.6
    base_lr: float = 2e-4
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.lr <= 0 or self.base_lr <= 0:
            raise ValueError("learning rate must be > 0")


def adam_step(state: AdamState, params: dict[str, Tensor]) -> None:
    """Bias-corrected Adam update of every parameter from its ``grad`` buffer, in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != g.shape:
            raise ValueError(f"{name}: moment shape {m.shape} != gradient shape {g.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def lr_decay(state: AdamState, epoch: int) -> None:
    """Set lr = base_lr * decay**epoch."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    state.lr = state.base_lr * state.decay**epoch
