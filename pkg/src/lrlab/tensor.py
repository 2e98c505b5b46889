"""Dense tensors with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient::

    w = Tensor(w0, requires_grad=True)
    with Tape() as tape:
        loss = softmax_cross_entropy(matmul(x, w), labels)
    backward(tape, loss)
    w.grad

Tensors default to float32. A float64 tensor is kept as float64 so gradient
checks can run the same forward path at higher precision.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, LabelError, ShapeError, UsageError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            dtype = np.float64 if getattr(data, "dtype", None) == np.float64 else np.float32
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


@dataclass
class _Node:
    out: Tensor
    inputs: tuple
    backward: Callable[[np.ndarray], tuple]


class Tape:
    """Ordered record of differentiable operations."""

    _stack: list["Tape"] = []

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        Tape._stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._stack.pop()
        return False

    def __len__(self):
        return len(self.nodes)


def _active() -> Tape | None:
    return Tape._stack[-1] if Tape._stack else None


def _record(out: Tensor, inputs: Sequence[Tensor], fn: Callable) -> Tensor:
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.nodes.append(_Node(out, tuple(inputs), fn))
    return out


def backward(tape: Tape, loss: Tensor) -> None:
    """Populate ``.grad`` on every tensor that requires it, from ``loss``.

    Grads are reset at the start of each call, so two calls on the same tape
    produce the same gradients rather than doubled ones.
    """
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    end = next((i for i in range(len(tape.nodes) - 1, -1, -1) if tape.nodes[i].out is loss), None)
    if end is None:
        raise UsageError("loss was not produced on this tape")

    nodes = tape.nodes[: end + 1]
    seen: dict[int, Tensor] = {}
    for node in nodes:
        for t in node.inputs:
            if t.requires_grad:
                t.grad = None
                seen[id(t)] = t
        node.out.grad = None
        seen[id(node.out)] = node.out

    acc: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(nodes):
        g = acc.get(id(node.out))
        if g is None:
            continue
        for t, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not t.requires_grad:
                continue
            key = id(t)
            if key in acc:
                acc[key] = acc[key] + gi
            else:
                acc[key] = gi
    for key, g in acc.items():
        t = seen.get(key)
        if t is not None:
            t.grad = g.astype(t.data.dtype, copy=False)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ----------------------------------------------------------------- primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def grad_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), grad_fn)


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a per-feature bias along axis 1 of (N, F) or (N, F, H, W)."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.data.ndim < 2 or x.shape[1] != b.shape[0]:
        raise DimensionError(f"bias {b.shape} does not match input {x.shape}")
    bshape = (1, -1) + (1,) * (x.data.ndim - 2)
    out = Tensor(x.data + b.data.reshape(bshape))
    axes = (0,) + tuple(range(2, x.data.ndim))

    def grad_fn(g):
        gb = g.sum(axis=axes, dtype=np.float64).astype(g.dtype) if b.requires_grad else None
        return g, gb

    return _record(out, (x, b), grad_fn)


def conv_output_size(size: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - 3) // stride + 1


def conv2d(x: Tensor, k: Tensor, stride: int = 1, pad: int = 1) -> Tensor:
    """3x3 cross-correlation of (N, C, H, W) with (F, C, 3, 3) kernels."""
    x, k = _as_tensor(x), _as_tensor(k)
    if stride not in (1, 2) or pad not in (0, 1):
        raise ShapeError(f"conv2d supports stride in {{1, 2}} and pad in {{0, 1}}, got {stride}, {pad}")
    if x.data.ndim != 4 or k.data.ndim != 4 or k.shape[2:] != (3, 3) or k.shape[1] != x.shape[1]:
        raise DimensionError(f"conv2d shape mismatch: input {x.shape}, kernel {k.shape}")
    N, C, H, W = x.shape
    F = k.shape[0]
    Ho, Wo = conv_output_size(H, stride, pad), conv_output_size(W, stride, pad)
    if Ho < 1 or Wo < 1:
        raise ShapeError(f"conv2d output would be {Ho}x{Wo} for input {H}x{W}")
    cols = kernels.im2col(x.data, stride, pad).reshape(N * Ho * Wo, C * 9)
    kmat = k.data.reshape(F, C * 9)
    out = Tensor(np.ascontiguousarray((cols @ kmat.T).reshape(N, Ho, Wo, F).transpose(0, 3, 1, 2)))

    def grad_fn(g):
        g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(N * Ho * Wo, F)
        gk = (g2.T @ cols).reshape(k.shape) if k.requires_grad else None
        gx = None
        if x.requires_grad:
            gx = kernels.col2im((g2 @ kmat).reshape(N, Ho, Wo, C * 9), x.shape, stride, pad)
        return gx, gk

    return _record(out, (x, k), grad_fn)


def relu(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    out = Tensor(np.where(mask, x.data, 0).astype(x.data.dtype))
    return _record(out, (x,), lambda g: (g * mask,))


def reshape(x: Tensor, shape: tuple) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(x.data.reshape(shape))
    return _record(out, (x,), lambda g: (g.reshape(x.shape),))


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the batch axis."""
    return reshape(x, (x.shape[0], -1))


def tsum(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    out = Tensor(np.array([x.data.sum(dtype=np.float64)], dtype=x.data.dtype))
    return _record(out, (x,), lambda g: (np.full_like(x.data, g.reshape(-1)[0]),))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), lambda g: (g * b.data, g * a.data))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of ``labels`` under softmax(logits)."""
    logits = _as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if logits.data.ndim != 2 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"logits {logits.shape} vs {labels.shape[0]} labels")
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelError(f"labels must lie in [0, {c})")
    z = logits.data.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(lse - z[rows, labels]))
    out = Tensor(np.array([loss], dtype=logits.data.dtype))

    def grad_fn(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1.0
        return ((p * (float(g.reshape(-1)[0]) / n)).astype(logits.data.dtype),)

    return _record(out, (logits,), grad_fn)


def mse_loss(pred: Tensor, target: np.ndarray) -> Tensor:
    """Mean over every element of (pred - target)**2; ``target`` is constant."""
    pred = _as_tensor(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DimensionError(f"mse shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred.data.astype(np.float64) - target
    out = Tensor(np.array([np.mean(diff * diff)], dtype=pred.data.dtype))

    def grad_fn(g):
        return ((diff * (2.0 * float(g.reshape(-1)[0]) / diff.size)).astype(pred.data.dtype),)

    return _record(out, (pred,), grad_fn)
