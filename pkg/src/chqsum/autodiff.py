"""Dense float64 tensors with reverse-mode automatic differentiation.

Differentiable operations record backward closures onto an explicit tape;
``Tape.backward`` replays them in reverse order. Everything is computed in
64-bit floats so that finite-difference gradient checks at 1e-4 relative
tolerance are meaningful. The tape is created fresh for every training step
and never retained across steps; without an active tape, operations run
forward-only (inference mode).
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Sequence

import numpy as np

NEG_INF = float("-inf")

GELU_SQRT_2_OVER_PI = 0.7978845608
GELU_CUBIC_COEF = 0.044715
LAYER_NORM_EPS = 1e-6


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class Tensor:
    """A dense float64 array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data.item())

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Recorded backward closures for one forward computation."""

    __slots__ = ("_records",)

    def __init__(self):
        self._records: list[Callable[[], None]] = []

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, root: Tensor) -> None:
        """Seed the root gradient with ones and replay the tape in reverse."""
        root.accumulate_grad(np.ones_like(root.data))
        for record in reversed(self._records):
            record()

    def clear(self) -> None:
        self._records.clear()


_TAPE_STACK: list[Tape] = []


@contextlib.contextmanager
def tape() -> Iterator[Tape]:
    """Activate a fresh tape for the duration of the block."""
    t = Tape()
    _TAPE_STACK.append(t)
    try:
        yield t
    finally:
        _TAPE_STACK.pop()


def _record(fn: Callable[[], None]) -> None:
    if _TAPE_STACK:
        _TAPE_STACK[-1]._records.append(fn)


def _needs_grad(*tensors: Tensor) -> bool:
    return bool(_TAPE_STACK) and any(t.requires_grad for t in tensors)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back down to the original operand shape."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data + b.data, a.requires_grad or b.requires_grad)
    if _needs_grad(a, b):
        def _bw(out=out, a=a, b=b):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g, b.data.shape))
        _record(_bw)
    return out


def multiply(a: Tensor, b: Tensor) -> Tensor:
    out = Tensor(a.data * b.data, a.requires_grad or b.requires_grad)
    if _needs_grad(a, b):
        def _bw(out=out, a=a, b=b):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b.accumulate_grad(_unbroadcast(g * a.data, b.data.shape))
        _record(_bw)
    return out


def scale(a: Tensor, s: float) -> Tensor:
    out = Tensor(a.data * s, a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a, s=s):
            if out.grad is not None:
                a.accumulate_grad(out.grad * s)
        _record(_bw)
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, a.requires_grad or b.requires_grad)
    if _needs_grad(a, b):
        def _bw(out=out, a=a, b=b):
            g = out.grad
            if g is None:
                return
            if a.requires_grad:
                a.accumulate_grad(g @ b.data.T)
            if b.requires_grad:
                b.accumulate_grad(a.data.T @ g)
        _record(_bw)
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor(a.data.T.copy(), a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a):
            if out.grad is not None:
                a.accumulate_grad(out.grad.T)
        _record(_bw)
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop].copy(), a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a, start=start, stop=stop):
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[start:stop] = out.grad
            a.accumulate_grad(g)
        _record(_bw)
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop].copy(), a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a, start=start, stop=stop):
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a.accumulate_grad(g)
        _record(_bw)
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    out = Tensor(np.concatenate([p.data for p in parts], axis=1),
                 any(p.requires_grad for p in parts))
    if bool(_TAPE_STACK) and out.requires_grad:
        widths = [p.data.shape[1] for p in parts]
        def _bw(out=out, parts=tuple(parts), widths=tuple(widths)):
            g = out.grad
            if g is None:
                return
            offset = 0
            for p, w in zip(parts, widths):
                if p.requires_grad:
                    p.accumulate_grad(g[:, offset:offset + w])
                offset += w
        _record(_bw)
    return out


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of an embedding table; backward scatter-adds."""
    idx = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[idx], table.requires_grad)
    if _needs_grad(table):
        def _bw(out=out, table=table, idx=idx):
            if out.grad is None:
                return
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table.accumulate_grad(g)
        _record(_bw)
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a):
            if out.grad is not None:
                a.accumulate_grad(out.grad * (1.0 - out.data * out.data))
        _record(_bw)
    return out


def gelu(a: Tensor) -> Tensor:
    """Gaussian error linear unit, tanh approximation."""
    x = a.data
    inner = GELU_SQRT_2_OVER_PI * (x + GELU_CUBIC_COEF * x ** 3)
    t = np.tanh(inner)
    out = Tensor(0.5 * x * (1.0 + t), a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a, x=x, t=t):
            if out.grad is None:
                return
            d_inner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC_COEF * x ** 2)
            local = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
            a.accumulate_grad(out.grad * local)
        _record(_bw)
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Softmax over the last axis; -inf entries map to exactly 0.

    Stabilized by subtracting the row maximum. A row consisting entirely of
    -inf has no defined distribution and raises ``ValueError``.
    """
    m = np.max(a.data, axis=-1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise ValueError("softmax row is entirely -inf (degenerate row)")
    e = np.exp(a.data - m)
    p = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(p, a.requires_grad)
    if _needs_grad(a):
        def _bw(out=out, a=a):
            g = out.grad
            if g is None:
                return
            p = out.data
            a.accumulate_grad(p * (g - (g * p).sum(axis=-1, keepdims=True)))
        _record(_bw)
    return out


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable log-softmax on a plain array (no gradient)."""
    m = np.max(x, axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def layer_norm(a: Tensor, gain: Tensor, bias: Tensor) -> Tensor:
    """Per-row normalization over the last axis, then affine transform."""
    d = a.data.shape[-1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError(f"gain/bias must have shape ({d},)")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LAYER_NORM_EPS)
    xhat = (a.data - mu) * inv
    out = Tensor(xhat * gain.data + bias.data,
                 a.requires_grad or gain.requires_grad or bias.requires_grad)
    if _needs_grad(a, gain, bias):
        def _bw(out=out, a=a, gain=gain, bias=bias, xhat=xhat, inv=inv):
            g = out.grad
            if g is None:
                return
            if gain.requires_grad:
                gain.accumulate_grad((g * xhat).reshape(-1, xhat.shape[-1]).sum(axis=0))
            if bias.requires_grad:
                bias.accumulate_grad(g.reshape(-1, g.shape[-1]).sum(axis=0))
            if a.requires_grad:
                gx = g * gain.data
                a.accumulate_grad(inv * (
                    gx
                    - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True)
                ))
        _record(_bw)
    return out


def cross_entropy(logits: Tensor, target_ids: Sequence[int],
                  positions: Sequence[int]) -> Tensor:
    """Mean negative log-probability of the targets at the selected rows.

    Log-softmax and the NLL are fused for numerical stability. The reduction
    over positions is the mean, keeping magnitudes comparable across
    objectives that select different numbers of positions.
    """
    pos = list(positions)
    if not pos:
        raise ValueError("cross_entropy requires at least one position (empty loss)")
    tgt = list(target_ids)
    if len(tgt) != len(pos):
        raise ShapeError(f"{len(tgt)} targets for {len(pos)} positions")
    rows = logits.data[pos]
    m = rows.max(axis=1, keepdims=True)
    z = rows - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    picked = rows[np.arange(len(pos)), tgt]
    out = Tensor(np.mean(lse - picked), logits.requires_grad)
    if _needs_grad(logits):
        def _bw(out=out, logits=logits, pos=pos, tgt=tgt, z=z):
            if out.grad is None:
                return
            p = np.exp(z)
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(len(pos)), tgt] -= 1.0
            g = np.zeros_like(logits.data)
            np.add.at(g, pos, p * (float(out.grad) / len(pos)))
            logits.accumulate_grad(g)
        _record(_bw)
    return out
