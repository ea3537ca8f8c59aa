"""Central finite-difference gradient checking for the autodiff core."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, tape

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


def numeric_gradient(loss_fn: Callable[[], float], param: Tensor,
                     h: float = DEFAULT_STEP) -> np.ndarray:
    """Entrywise central differences of a scalar function w.r.t. one tensor."""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        hi = loss_fn()
        flat[i] = original - h
        lo = loss_fn()
        flat[i] = original
        out[i] = (hi - lo) / (2.0 * h)
    return grad


MAGNITUDE_FLOOR = 1e-4


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst-entry relative error, floored at a minimum magnitude scale.

    Entries whose gradients are below the floor are effectively compared with
    an absolute tolerance of ``tol * floor``; central differences cannot
    certify smaller values (their roundoff noise is ~eps*|f|/h), while any
    structural backward bug perturbs gradients far above that level.
    """
    diff = np.abs(analytic - numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                       MAGNITUDE_FLOOR)
    rel = diff / denom
    return float(rel.max()) if rel.size else 0.0


def check_gradients(build_loss: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = DEFAULT_STEP) -> float:
    """Compare tape gradients against finite differences; return the worst error.

    ``build_loss`` must rebuild the scalar loss from the parameters' current
    data on every call so perturbed evaluations see fresh forward passes.
    """
    for p in params:
        p.zero_grad()
    with tape() as t:
        loss = build_loss()
        t.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        numeric = numeric_gradient(lambda: build_loss().item(), p, h=h)
        worst = max(worst, max_relative_error(analytic, numeric))
    for p in params:
        p.zero_grad()
    return worst
