"""Differentiable primitive operations.

Layout convention for rank-5 tensors is (batch, channel, time, height, width);
rank-4 image tensors are (batch, channel, height, width). Convolutions are
cross-correlations (no kernel flip).
"""
from __future__ import annotations

import itertools
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DimensionError, Tensor, as_tensor, is_grad_enabled


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out._op = op
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _tuple(v, n: int) -> tuple:
    if isinstance(v, int):
        return (v,) * n
    v = tuple(int(x) for x in v)
    if len(v) != n:
        raise DimensionError(f"expected {n} values, got {v}")
    return v


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data + b.data

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(out, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    return _result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    """Broadcasting product. See :func:`hadamard` for the strict-shape version."""
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    out = a.data * b.data

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _result(out, (a, b), backward, "mul")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"hadamard needs equal shapes, got {a.shape} and {b.shape}")
    return mul(a, b)


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    if a.shape != b.shape:
        raise DimensionError(f"maximum needs equal shapes, got {a.shape} and {b.shape}")
    pick_a = a.data >= b.data
    out = np.where(pick_a, a.data, b.data)

    def backward(g):
        return g * pick_a, g * ~pick_a

    return _result(out, (a, b), backward, "maximum")


def relu(x: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = x.data > 0
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


# ---------------------------------------------------------------- reductions / shape

def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001
    out = np.asarray(x.data.sum(axis=axis), dtype=x.dtype)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _result(out, (x,), backward, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    out = np.asarray(x.data.mean(axis=axis), dtype=x.dtype)

    def backward(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).astype(x.dtype),)

    return _result(out, (x,), backward, "mean")


def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.ascontiguousarray(x.data.transpose(axes))
    return _result(out, (x,), lambda g: (g.transpose(inverse),), "transpose")


def take(x: Tensor, indices, axis: int) -> Tensor:
    """Gather along ``axis``; repeated indices accumulate in backward."""
    idx = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (gx,)

    return _result(out, (x,), backward, "take")


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise DimensionError("concat needs at least one part")
    ref = parts[0].shape
    ax = axis % len(ref)
    for p in parts[1:]:
        if len(p.shape) != len(ref) or any(
            p.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise DimensionError(f"concat along axis {axis}: shapes {[q.shape for q in parts]}")
    out = np.concatenate([p.data for p in parts], axis=ax)
    bounds = np.cumsum([p.shape[ax] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(out, parts, backward, "concat")


# ---------------------------------------------------------------- dense layers

def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gx = g @ weight.data if x.requires_grad else None
        gw = g.T @ x.data if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _result(out, parents, backward, "linear")


def dropout(x: Tensor, rate: float, training: bool, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout: survivors scaled by 1/(1-rate), eval mode is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    mask = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return _result(x.data * mask, (x,), lambda g: (g * mask,), "dropout")


# ---------------------------------------------------------------- convolution

def _windows(xp: np.ndarray, kernel: tuple, stride: tuple) -> np.ndarray:
    nd = len(kernel)
    win = sliding_window_view(xp, kernel, axis=tuple(range(2, 2 + nd)))
    return win[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)]


def _out_extent(n: int, k: int, s: int, p: int, what: str, dim: int) -> int:
    if k > n + 2 * p:
        raise DimensionError(
            f"{what}: kernel extent {k} exceeds padded input extent {n + 2 * p} on spatial axis {dim}"
        )
    return (n + 2 * p - k) // s + 1


def _conv_nd(x: Tensor, weight: Tensor, bias: Optional[Tensor], stride, padding, nd: int, op: str) -> Tensor:
    if x.ndim != nd + 2 or weight.ndim != nd + 2:
        raise DimensionError(f"{op}: expected rank-{nd + 2} input and weight, got {x.shape}, {weight.shape}")
    if x.shape[1] != weight.shape[1]:
        raise DimensionError(
            f"{op}: input has {x.shape[1]} channels but weight expects {weight.shape[1]}"
        )
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"{op}: bias {bias.shape} does not match {weight.shape[0]} filters")
    stride = _tuple(stride, nd)
    padding = _tuple(padding, nd)
    kernel = weight.shape[2:]
    extents = [_out_extent(n, k, s, p, op, i) for i, (n, k, s, p) in
               enumerate(zip(x.shape[2:], kernel, stride, padding))]

    xp = x.data
    if any(padding):
        xp = np.pad(xp, [(0, 0), (0, 0)] + [(p, p) for p in padding])
    win = _windows(xp, kernel, stride)
    sp = list(range(2, 2 + nd))
    kax = list(range(2 + nd, 2 + 2 * nd))
    out = np.tensordot(win, weight.data, axes=([1] + kax, [1] + sp))
    out = np.moveaxis(out, -1, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nd)
    out = np.ascontiguousarray(out)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        gw = gx = None
        if weight.requires_grad:
            gw = np.tensordot(g, win, axes=([0] + sp, [0] + sp))
        if x.requires_grad:
            cols = np.tensordot(g, weight.data, axes=([1], [0]))  # (B, O..., C, k...)
            gxp = np.zeros_like(xp)
            for offs in itertools.product(*(range(k) for k in kernel)):
                region = tuple(slice(o, o + s * (e - 1) + 1, s) for o, s, e in zip(offs, stride, extents))
                gxp[(slice(None), slice(None)) + region] += np.moveaxis(cols[(Ellipsis,) + offs], -1, 1)
            crop = tuple(slice(p, p + n) for p, n in zip(padding, x.shape[2:]))
            gx = gxp[(slice(None), slice(None)) + crop]
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=tuple([0] + sp))

    return _result(out, parents, backward, op)


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    return _conv_nd(x, weight, bias, stride, padding, 2, "conv2d")


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride=1, padding=0) -> Tensor:
    return _conv_nd(x, weight, bias, stride, padding, 3, "conv3d")


# ---------------------------------------------------------------- pooling

def _maxpool_nd(x: Tensor, kernel, stride, nd: int, op: str) -> Tensor:
    if x.ndim != nd + 2:
        raise DimensionError(f"{op}: expected rank-{nd + 2} input, got {x.shape}")
    kernel = _tuple(kernel, nd)
    stride = _tuple(stride if stride is not None else kernel, nd)
    extents = [_out_extent(n, k, s, 0, op, i) for i, (n, k, s) in
               enumerate(zip(x.shape[2:], kernel, stride))]
    win = _windows(x.data, kernel, stride)
    flat = win.reshape(win.shape[: 2 + nd] + (-1,))
    arg = flat.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gx = np.zeros_like(x.data)
        for flat_idx, offs in enumerate(itertools.product(*(range(k) for k in kernel))):
            region = tuple(slice(o, o + s * (e - 1) + 1, s) for o, s, e in zip(offs, stride, extents))
            gx[(slice(None), slice(None)) + region] += g * (arg == flat_idx)
        return (gx,)

    return _result(np.ascontiguousarray(out), (x,), backward, op)


def maxpool2d(x: Tensor, kernel, stride=None) -> Tensor:
    return _maxpool_nd(x, kernel, stride, 2, "maxpool2d")


def maxpool3d(x: Tensor, kernel, stride=None) -> Tensor:
    return _maxpool_nd(x, kernel, stride, 3, "maxpool3d")


def global_avgpool3d(x: Tensor, kernel) -> Tensor:
    """Average over a window that covers the whole (T, H, W) volume -> (B, C)."""
    if x.ndim != 5:
        raise DimensionError(f"global_avgpool3d: expected rank-5 input, got {x.shape}")
    kernel = _tuple(kernel, 3)
    if kernel != tuple(x.shape[2:]):
        raise DimensionError(
            f"global_avgpool3d: kernel {kernel} must equal the remaining extents {tuple(x.shape[2:])}"
        )
    return mean(x, axis=(2, 3, 4))


def spatial_expectation(x: Tensor, coords: np.ndarray) -> Tensor:
    """Soft-argmax pooling: softmax over the H*W positions of each (B, C) map,
    then the expected value of ``coords`` (H*W, K) under it -> (B, C, K)."""
    if x.ndim != 4:
        raise DimensionError(f"spatial_expectation: expected rank-4 input, got {x.shape}")
    b, c, h, w = x.shape
    coords = np.asarray(coords, dtype=x.dtype)
    if coords.ndim != 2 or coords.shape[0] != h * w:
        raise DimensionError(f"spatial_expectation: coords {coords.shape} do not cover a {h}x{w} map")
    flat = x.data.reshape(b, c, h * w)
    e = np.exp(flat - flat.max(axis=2, keepdims=True))
    p = e / e.sum(axis=2, keepdims=True)
    out = p @ coords

    def backward(g):
        # d out_k / d x_j = p_j (coords_jk - out_k)
        proj = g @ coords.T  # (B, C, H*W)
        inner = (g * out).sum(axis=2, keepdims=True)
        return ((p * (proj - inner)).reshape(x.shape),)

    return _result(out, (x,), backward, "spatial_expectation")


# ---------------------------------------------------------------- normalization

def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel (axis 1) normalization over every other axis.

    Train mode uses biased batch variance for normalization and updates the
    running buffers in place (running variance uses the unbiased estimate).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise DimensionError(f"batchnorm: input {x.shape} vs gamma {gamma.shape}, beta {beta.shape}")
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    n = x.size // x.shape[1]
    dt = x.dtype.type
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        unbiased = var * (n / (n - 1)) if n > 1 else var
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + dt(eps))).astype(x.dtype)
    xhat = (x.data - mu.astype(x.dtype).reshape(bshape)) * inv_std.reshape(bshape)
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gx = None
        if x.requires_grad:
            dxhat = g * gamma.data.reshape(bshape)
            if training:
                gx = (inv_std.reshape(bshape) / n) * (
                    n * dxhat
                    - dxhat.sum(axis=axes).reshape(bshape)
                    - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape)
                )
            else:
                gx = dxhat * inv_std.reshape(bshape)
        return gx, gg, gb

    return _result(out.astype(x.dtype), (x, gamma, beta), backward, "batchnorm")


# ---------------------------------------------------------------- classification

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels) -> tuple:
    """Mean negative log-likelihood. Returns ``(loss, probabilities)``."""
    labels = np.asarray(labels, dtype=np.intp)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(f"logits {logits.shape} vs labels {labels.shape}")
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_p = z - log_norm
    probs = np.exp(log_p)
    rows = np.arange(labels.size)
    loss = np.asarray(-log_p[rows, labels].mean(), dtype=logits.dtype)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")

    def backward(g):
        grad = probs.copy()
        grad[rows, labels] -= 1.0
        return (grad * (g / labels.size),)

    return _result(loss, (logits,), backward, "softmax_cross_entropy"), probs
