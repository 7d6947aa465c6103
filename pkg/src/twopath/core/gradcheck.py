"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad


def _standard(rng: np.random.Generator, shape: tuple) -> np.ndarray:
    return rng.standard_normal(shape)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    seed: int = 0,
    step: float = 1e-5,
    sampler: Optional[Callable[[np.random.Generator, tuple], np.ndarray]] = None,
) -> float:
    """Max relative error between analytic and numeric gradients of ``fn``.

    ``inputs`` holds shapes (tuples, sampled with ``sampler``) or arrays.
    Everything runs in float64. The scalar checked is ``sum(fn(*x) * r)`` for a
    fixed random ``r``, so every output element contributes. The error per
    element is ``|analytic - numeric| / max(1, |numeric|)``.
    ``fn`` must be deterministic across calls.
    """
    rng = np.random.default_rng(seed)
    sampler = sampler or _standard
    arrays = []
    for item in inputs:
        if isinstance(item, tuple):
            arrays.append(np.asarray(sampler(rng, item), dtype=np.float64))
        else:
            arrays.append(np.array(item, dtype=np.float64))

    leaves = [Tensor(a.copy(), requires_grad=True, dtype=np.float64) for a in arrays]
    out = fn(*leaves)
    proj = rng.standard_normal(out.shape)
    loss = (out * Tensor(proj, dtype=np.float64)).sum()
    backward(loss)
    analytic = [leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data) for leaf in leaves]

    def scalar(values) -> float:
        with no_grad():
            res = fn(*[Tensor(v, dtype=np.float64) for v in values])
        return float(np.sum(res.data * proj))

    worst = 0.0
    for i, base in enumerate(arrays):
        flat = base.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            plus = scalar(arrays)
            flat[j] = orig - step
            minus = scalar(arrays)
            flat[j] = orig
            numeric = (plus - minus) / (2 * step)
            a = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(numeric)))
    return worst
