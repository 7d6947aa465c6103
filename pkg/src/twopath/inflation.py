"""Bootstrapping 3D convolution kernels from 2D ones.

A 2D kernel is replicated ``n_t`` times along a new temporal axis and divided by
``n_t``. On a "boring" clip (one frame repeated) the inflated 3D convolution
then reproduces the 2D response exactly, which is what makes 2D-pretrained
weights a sensible starting point for the 3D pathway.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from .core import Tensor, conv2d, conv3d, no_grad


@dataclass(frozen=True)
class InflationSpec:
    n_t: int
    source_shape: tuple

    def __post_init__(self):
        if self.n_t < 1:
            raise ValueError(f"temporal extent must be >= 1, got {self.n_t}")
        if len(self.source_shape) != 4:
            raise ValueError(f"2D kernel shape must be (F, C, kh, kw), got {self.source_shape}")

    @property
    def target_shape(self) -> tuple:
        f, c, kh, kw = self.source_shape
        return (f, c, self.n_t, kh, kw)


def inflate_2d_to_3d(w2d: np.ndarray, n_t: int) -> np.ndarray:
    """(F, C, kh, kw) -> (F, C, n_t, kh, kw), every temporal slice equal to w2d / n_t."""
    w2d = np.asarray(w2d)
    spec = InflationSpec(n_t, w2d.shape)
    out = np.repeat(w2d[:, :, None, :, :], spec.n_t, axis=2) / w2d.dtype.type(spec.n_t)
    return out.astype(w2d.dtype)


def boring_video_equivalence(frame: np.ndarray, w2d: np.ndarray, bias: np.ndarray, n_t: int,
                             stride_spatial=1, padding_spatial=0) -> float:
    """Max |conv3d(repeated frame, inflated w) - conv2d(frame, w)| over all cells.

    ``frame`` is (C, H, W). The clip repeats it ``n_t`` times and the 3D kernel
    spans all of them, so the temporal output extent is 1.
    """
    frame = np.asarray(frame)
    dtype = frame.dtype if frame.dtype in (np.float32, np.float64) else np.float32
    frame = frame.astype(dtype)
    w2d = np.asarray(w2d, dtype=dtype)
    bias = np.asarray(bias, dtype=dtype)
    sh, sw = (stride_spatial, stride_spatial) if np.isscalar(stride_spatial) else stride_spatial
    ph, pw = (padding_spatial, padding_spatial) if np.isscalar(padding_spatial) else padding_spatial
    clip = np.repeat(frame[None, :, None, :, :], n_t, axis=2)
    w3d = inflate_2d_to_3d(w2d, n_t)
    with no_grad():
        out3 = conv3d(Tensor(clip), Tensor(w3d), Tensor(bias), (1, sh, sw), (0, ph, pw)).data
        out2 = conv2d(Tensor(frame[None]), Tensor(w2d), Tensor(bias), (sh, sw), (ph, pw)).data
    return float(np.max(np.abs(out3[:, :, 0] - out2))) if out2.size else 0.0


def inflate_state(state2d: Dict[str, np.ndarray], template3d: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    """Map a 2D network's state onto a 3D network with matching names.

    Rank-4 kernels whose 3D counterpart is rank-5 are inflated with the target's
    temporal extent; everything else (biases, batch-norm affine and running
    statistics) is copied unchanged. Names absent from ``state2d`` keep the
    template value.
    """
    out = {}
    for name, target in template3d.items():
        src = state2d.get(name)
        if src is None:
            out[name] = target.copy()
        elif src.ndim == 4 and target.ndim == 5:
            w = inflate_2d_to_3d(src, target.shape[2])
            if w.shape != target.shape:
                raise ValueError(f"{name}: inflated {w.shape} does not match {target.shape}")
            out[name] = w.astype(target.dtype)
        elif src.shape == target.shape:
            out[name] = src.astype(target.dtype).copy()
        else:
            raise ValueError(f"{name}: cannot map 2D shape {src.shape} onto {target.shape}")
    return out
