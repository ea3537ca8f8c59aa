"""Adam with bias correction, a linear learning-rate decay, and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .autodiff import Tensor


def decayed_lr(lr0: float, step: int, total_steps: int) -> float:
    """Learning rate after ``step`` completed steps: linear decay to 0."""
    return lr0 * max(0.0, 1.0 - step / total_steps)


def clip_global_norm(grads: Iterable[np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``.

    Returns the applied scaling factor (1.0 when no clipping was needed).
    """
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = list(grads)
    total = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if total <= max_norm:
        return 1.0
    factor = max_norm / total
    for g in grads:
        g *= factor
    return factor


@dataclass
class AdamState:
    """Per-parameter first/second moments plus the decay schedule."""

    lr0: float
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Mapping[str, Tensor], lr0: float,
                   total_steps: int, **kwargs) -> "AdamState":
        state = cls(lr0=lr0, total_steps=total_steps, **kwargs)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state

    @property
    def lr(self) -> float:
        return decayed_lr(self.lr0, self.step, self.total_steps)


def adam_step(state: AdamState, params: Mapping[str, Tensor],
              grads: Mapping[str, np.ndarray] | None = None) -> None:
    """Apply one bias-corrected Adam update in place.

    Gradients default to each parameter's ``.grad`` buffer; a missing
    gradient is treated as zero, which leaves the parameter unchanged
    while its moments decay.
    """
    lr = state.lr
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if grads is not None:
            g = grads.get(name)
        else:
            g = p.grad
        m = state.m[name]
        v = state.v[name]
        if g is None:
            m *= state.beta1
            v *= state.beta2
        else:
            m *= state.beta1
            m += (1.0 - state.beta1) * g
            v *= state.beta2
            v += (1.0 - state.beta2) * (g * g)
        if lr == 0.0:
            continue
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
