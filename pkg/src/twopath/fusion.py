"""Fusing the holistic feature g with the relation bank l.

:class:`FusionModule` implements the modulation fusion
``z = [F1(l) * g + F2(l), appended]`` where F1 and F2 are dropout + affine
maps of l. :class:`AblationFusion` provides the alternative fusion methods
used for comparison.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .core import (
    BatchNorm,
    Conv3d,
    DimensionError,
    Dropout,
    Linear,
    Module,
    Tensor,
    concat,
    global_avgpool3d,
    hadamard,
    maximum,
    relu,
    softmax,
    take,
)
from .core.tensor import DEFAULT_DTYPE

APPEND_CHOICES = ("holistic", "relation", "none")
ABLATION_METHODS = ("max", "average", "concat", "bilinear", "sum", "conv2d", "conv3d")
FUSION_METHODS = ("film",) + ABLATION_METHODS


class FusionModule(Module):
    def __init__(self, d_l: int, d_g: int, rng: np.random.Generator, append: str = "holistic",
                 dropout: float = 0.5, dtype=DEFAULT_DTYPE):
        super().__init__()
        if append not in APPEND_CHOICES:
            raise ValueError(f"append must be one of {APPEND_CHOICES}, got {append!r}")
        self.drop1 = Dropout(dropout)
        self.f1 = Linear(d_l, d_g, rng, dtype=dtype, init_std=0.01)
        self.f1.bias.data[...] = 1.0
        self.drop2 = Dropout(dropout)
        self.f2 = Linear(d_l, d_g, rng, dtype=dtype, init_std=0.01)
        self.append = append
        self.d_g, self.d_l = d_g, d_l

    @property
    def out_dim(self) -> int:
        return self.d_g + {"holistic": self.d_g, "relation": self.d_l, "none": 0}[self.append]

    def modulation(self, l: Tensor, rng: Optional[np.random.Generator] = None) -> tuple:
        return self.f1(self.drop1(l, rng)), self.f2(self.drop2(l, rng))

    def forward(self, g: Tensor, l: Tensor, rng: Optional[np.random.Generator] = None) -> Tensor:
        if g.ndim != 2 or g.shape[1] != self.d_g:
            raise DimensionError(f"fusion expects g of width {self.d_g}, got {g.shape}")
        if l.ndim != 2 or l.shape[1] != self.d_l:
            raise DimensionError(f"fusion expects l of width {self.d_l}, got {l.shape}")
        scale, shift = self.modulation(l, rng)
        modulated = hadamard(scale, g) + shift
        if self.append == "holistic":
            return concat([modulated, g], axis=1)
        if self.append == "relation":
            return concat([modulated, l], axis=1)
        return modulated


def fuse(g: Tensor, l: Tensor, module: FusionModule, rng: Optional[np.random.Generator] = None) -> Tensor:
    return module(g, l, rng)


def nearest_resize(volume: Tensor, extent: tuple) -> Tensor:
    """Nearest-neighbour resampling of the trailing three axes to ``extent``."""
    out = volume
    for axis, (src, dst) in zip((2, 3, 4), zip(volume.shape[2:], extent)):
        if src != dst:
            idx = np.minimum((np.arange(dst) * src) // dst, src - 1)
            out = take(out, idx, axis)
    return out


class AblationFusion(Module):
    """Baseline fusion methods.

    ``max``/``average``/``sum``/``bilinear`` first project l to width d_g with
    a learned affine map. ``concat`` returns [g, l]. ``conv2d``/``conv3d``
    consume the two pathways' last feature volumes, channel-concatenated after
    aligning the per-frame maps to the holistic volume, then apply a conv /
    batch-norm / relu block and global average pooling.
    """

    def __init__(self, method: str, d_g: int, d_l: int, rng: np.random.Generator, rank: int = 8,
                 frame_channels: int = 0, dtype=DEFAULT_DTYPE):
        super().__init__()
        if method not in ABLATION_METHODS:
            raise ValueError(f"unknown fusion method {method!r}; expected one of {ABLATION_METHODS}")
        self.method = method
        self.d_g, self.d_l = d_g, d_l
        if method in ("max", "average", "sum", "bilinear"):
            self.proj = Linear(d_l, d_g, rng, dtype=dtype, init_std=float(np.sqrt(1.0 / d_l)))
        if method == "bilinear":
            self.u = Linear(d_g, rank, rng, dtype=dtype, init_std=float(np.sqrt(1.0 / d_g)))
            self.v = Linear(d_g, rank, rng, dtype=dtype, init_std=float(np.sqrt(1.0 / d_g)))
            self.out = Linear(rank, d_g, rng, dtype=dtype)
        if method in ("conv2d", "conv3d"):
            kernel = (1, 3, 3) if method == "conv2d" else (3, 3, 3)
            pad = tuple(k // 2 for k in kernel)
            self.conv = Conv3d(d_g + frame_channels, d_g, kernel, rng, padding=pad, dtype=dtype)
            self.bn = BatchNorm(d_g, dtype=dtype)

    @property
    def needs_volumes(self) -> bool:
        return self.method in ("conv2d", "conv3d")

    @property
    def out_dim(self) -> int:
        return self.d_g + self.d_l if self.method == "concat" else self.d_g

    def forward(self, g: Tensor, l: Tensor, holistic_volume: Optional[Tensor] = None,
                frame_volume: Optional[Tensor] = None) -> Tensor:
        m = self.method
        if m == "concat":
            return concat([g, l], axis=1)
        if m in ("conv2d", "conv3d"):
            if holistic_volume is None or frame_volume is None:
                raise ValueError(f"{m} fusion needs both pathways' feature volumes")
            aligned = nearest_resize(frame_volume, holistic_volume.shape[2:])
            stacked = concat([holistic_volume, aligned], axis=1)
            h = relu(self.bn(self.conv(stacked)))
            return global_avgpool3d(h, h.shape[2:])
        p = self.proj(l)
        if p.shape != g.shape:
            raise DimensionError(f"projected relation {p.shape} does not match g {g.shape}")
        if m == "max":
            return maximum(g, p)
        if m == "sum":
            return g + p
        if m == "average":
            return (g + p) * 0.5
        return self.out(hadamard(self.u(g), self.v(p)))


def ablation_fuse(g: Tensor, l: Tensor, method: str, module: Optional[AblationFusion] = None,
                  rng: Optional[np.random.Generator] = None, **volumes) -> Tensor:
    if method not in ABLATION_METHODS:
        raise ValueError(f"unknown fusion method {method!r}; expected one of {ABLATION_METHODS}")
    if module is None:
        module = AblationFusion(method, g.shape[1], l.shape[1], rng or np.random.default_rng(0), dtype=g.dtype)
    return module(g, l, **volumes)


class ClassifierHead(Module):
    def __init__(self, d_in: int, classes: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.fc = Linear(d_in, classes, rng, dtype=dtype, init_std=0.01)

    def forward(self, z: Tensor) -> Tensor:
        if z.ndim != 2 or z.shape[1] != self.fc.weight.shape[1]:
            raise DimensionError(f"head expects width {self.fc.weight.shape[1]}, got {z.shape}")
        return self.fc(z)


def classify(z: Tensor, head: ClassifierHead) -> np.ndarray:
    """Class probabilities (B, K)."""
    return softmax(head(z).data)
