"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StateError
from .tensor import Tensor


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(
            step=0,
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(params, grads, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    """One Adam update. ``params[i].data`` is replaced, never written in place.

    A ``None`` gradient counts as zero.
    """
    params = list(params)
    grads = list(grads)
    if state.step < 0:
        raise StateError(f"negative step counter {state.step}")
    if len(state.m) != len(params) or len(state.v) != len(params) or len(grads) != len(params):
        raise StateError("parameter, gradient and moment lists differ in length")
    t = state.step + 1
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    new_m, new_v = [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.data.shape or v.shape != p.data.shape:
            raise StateError(f"moment shape {m.shape} does not match parameter {p.data.shape}")
        if g is None:
            g = np.zeros_like(p.data)
        elif g.shape != p.data.shape:
            raise StateError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        g = g.astype(np.float64)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        update = lr * (m / c1) / (np.sqrt(v / c2) + eps)
        p.data = (p.data - update).astype(p.data.dtype)
        new_m.append(m.astype(p.data.dtype))
        new_v.append(v.astype(p.data.dtype))
    return AdamState(step=t, m=new_m, v=new_v)


class Adam:
    """Stateful wrapper around :func:`adam_step`."""

    def __init__(self, params, lr: float = 3e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params: list[Tensor] = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.for_params(self.params)

    def step(self):
        self.state = adam_step(self.params, [p.grad for p in self.params], self.state,
                               self.lr, self.beta1, self.beta2, self.eps)
