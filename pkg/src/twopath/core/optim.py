from __future__ import annotations

from typing import Dict, Iterable, List

import numpy as np

from .tensor import Parameter


class SGD:
    """Heavy-ball SGD with weight decay folded into the gradient.

    v <- momentum * v - lr * (grad + weight_decay * value)
    value <- value + v

    Frozen parameters are skipped entirely, so their values stay bit-identical.
    """

    def __init__(self, params: Iterable[Parameter], lr: float, momentum: float = 0.9,
                 weight_decay: float = 0.0):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.params: List[Parameter] = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def _key(self, i: int, p: Parameter) -> str:
        return p.name or f"param{i}"

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.frozen:
                continue
            key = self._key(i, p)
            v = self.velocity.get(key)
            if v is None:
                v = np.zeros_like(p.data)
            elif v.shape != p.shape:
                raise ValueError(f"velocity for {key} has shape {v.shape}, parameter {p.shape}")
            g = p.grad
            if self.weight_decay:
                g = g + p.data * p.dtype.type(self.weight_decay)
            v = v * p.dtype.type(self.momentum) - g * p.dtype.type(self.lr)
            self.velocity[key] = v
            p.data += v

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


def sgd_step(params, lr: float, momentum: float, weight_decay: float, velocity: dict) -> None:
    """Functional form of :meth:`SGD.step` operating on an external velocity dict."""
    opt = SGD(params, lr, momentum, weight_decay)
    opt.velocity = velocity
    opt.step()


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale the gradients of ``params`` in place so their global L2 norm is
    at most ``max_norm``. Returns the norm before clipping."""
    grads = [p.grad for p in params if p.grad is not None and not p.frozen]
    total = float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads)))
    if total > max_norm:
        scale = max_norm / total
        for p in params:
            if p.grad is not None and not p.frozen:
                p.grad = p.grad * p.grad.dtype.type(scale)
    return total
