"""Adam with bias correction, operating in place on Tensor data."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import Tensor


class Adam:
    def __init__(self, params: Sequence[Tensor], beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence, lr: float) -> None:
        adam_step(self.params, grads, self, lr, self.beta1, self.beta2, self.eps)

    def state_arrays(self) -> dict:
        out = {}
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            out[f"{key}@m"] = self.m[i]
            out[f"{key}@v"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict, t: int) -> None:
        for i, p in enumerate(self.params):
            key = p.name or f"param{i}"
            self.m[i] = np.array(arrays[f"{key}@m"], dtype=p.dtype)
            self.v[i] = np.array(arrays[f"{key}@v"], dtype=p.dtype)
        self.t = int(t)


def adam_step(params, grads, state: Adam, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update. Raises before touching anything if a gradient is non-finite."""
    garrs = []
    for p, g in zip(params, grads):
        g = g.data if isinstance(g, Tensor) else np.asarray(g)
        if g.shape != p.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} does not match parameter {p.name} {p.shape}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"adam_step: non-finite gradient for parameter {p.name or '<unnamed>'}")
        garrs.append(g)
    state.t += 1
    c1 = 1.0 - beta1**state.t
    c2 = 1.0 - beta2**state.t
    for i, (p, g) in enumerate(zip(params, garrs)):
        m = state.m[i]
        v = state.v[i]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


def clip_grad_norm(grads: list, max_norm: float) -> tuple:
    """Scale gradients so their global L2 norm is at most ``max_norm``."""
    total = float(np.sqrt(sum(float(np.sum(g.data * g.data)) for g in grads)))
    if max_norm is None or max_norm <= 0 or not np.isfinite(total) or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return [Tensor(g.data * scale, dtype=g.dtype) for g in grads], total
