"""Holistic 3D pathway and multi-scale temporal relation pathway."""
from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .core import (
    BatchNorm,
    Conv2d,
    Conv3d,
    DimensionError,
    Linear,
    Module,
    Tensor,
    concat,
    global_avgpool3d,
    maxpool2d,
    maxpool3d,
    mean,
    relu,
    reshape,
    spatial_expectation,
    take,
    transpose,
)
from .core.tensor import DEFAULT_DTYPE

Triple = Tuple[int, int, int]

# first two pools keep temporal stride 1; later pools may reduce time
DESK_POOLS: Tuple[Tuple[Triple, Triple], ...] = (
    ((1, 3, 3), (1, 2, 2)),
    ((1, 3, 3), (1, 2, 2)),
    ((2, 1, 1), (2, 1, 1)),
)


def _pooled(n: int, k: int, s: int) -> int:
    return (n - k) // s + 1


class HolisticBlock(Module):
    def __init__(self, c_in: int, c_out: int, kernel: Triple, pool: Tuple[Triple, Triple],
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        padding = tuple(k // 2 for k in kernel)
        self.conv = Conv3d(c_in, c_out, kernel, rng, stride=1, padding=padding, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)
        self.pool_kernel, self.pool_stride = pool

    def forward(self, x: Tensor) -> Tensor:
        return maxpool3d(relu(self.bn(self.conv(x))), self.pool_kernel, self.pool_stride)


class HolisticPathway(Module):
    """Stack of conv3d / batch-norm / relu / max-pool blocks, then global average pooling.

    The output width ``d_g`` is the last block's channel count.
    """

    def __init__(self, in_channels: int, widths: Sequence[int], input_extent: Triple,
                 rng: np.random.Generator, kernels: Optional[Sequence[Triple]] = None,
                 pools: Sequence[Tuple[Triple, Triple]] = DESK_POOLS, dtype=DEFAULT_DTYPE):
        super().__init__()
        widths = list(widths)
        kernels = list(kernels) if kernels is not None else [(3, 3, 3)] * len(widths)
        pools = list(pools)
        if not (len(widths) == len(kernels) == len(pools)):
            raise ValueError("widths, kernels and pools must have one entry per block")
        for i, (k, s) in enumerate(pools[:2]):
            if k[0] != 1 or s[0] != 1:
                raise ValueError(f"pool {i} must keep temporal kernel/stride 1, got {k}/{s}")
        self.blocks = []
        c = in_channels
        for w, k, p in zip(widths, kernels, pools):
            self.blocks.append(HolisticBlock(c, w, tuple(k), (tuple(p[0]), tuple(p[1])), rng, dtype))
            c = w
        self.d_g = c
        self.input_extent = tuple(input_extent)
        self.final_kernel = self.volume_extent(self.input_extent)

    def volume_extent(self, extent: Triple) -> Triple:
        t, h, w = extent
        for i, block in enumerate(self.blocks):
            (kt, kh, kw), (st, sh, sw) = block.pool_kernel, block.pool_stride
            if kt > t or kh > h or kw > w:
                raise DimensionError(
                    f"holistic block {i}: pool kernel {block.pool_kernel} exceeds volume {(t, h, w)}"
                )
            t, h, w = _pooled(t, kt, st), _pooled(h, kh, sh), _pooled(w, kw, sw)
        return (t, h, w)

    def features(self, clip: Tensor) -> Tensor:
        """Last pre-pool feature volume (B, d_g, T', H', W')."""
        h = clip
        for i, block in enumerate(self.blocks):
            try:
                h = block(h)
            except DimensionError as exc:
                raise DimensionError(f"holistic block {i}: {exc}") from None
        return h

    def forward(self, clip: Tensor) -> Tensor:
        vol = self.features(clip)
        try:
            return global_avgpool3d(vol, self.final_kernel)
        except DimensionError as exc:
            raise DimensionError(f"holistic final average pool: {exc}") from None


def holistic_forward(clip: Tensor, pathway: HolisticPathway) -> Tensor:
    return pathway(clip)


class FrameFeatureExtractor(Module):
    """Shared 2D CNN applied to every frame, producing (B, T, d_f).

    Blocks are conv2d 3x3 / batch-norm / relu / 2x2 max-pool. Each final map is
    then pooled two ways: its mean (what is there) and a soft-argmax over
    circular coordinates (cos/sin of the row and column angle, i.e. where it
    is). ``sharpness`` scales the maps before the softmax, so larger values
    lock onto the strongest response. The 5 values per channel are projected to ``d_f`` and followed by
    batch-norm and relu. Because positions are encoded as angles, a shift of
    the whole frame rotates the features, so relations between frames can read
    motion without memorising absolute positions, and wrap-around at the frame
    edge stays continuous.
    """

    def __init__(self, in_channels: int, widths: Sequence[int], frame_size: Tuple[int, int], d_f: int,
                 rng: np.random.Generator, dtype=DEFAULT_DTYPE, sharpness: float = 4.0):
        super().__init__()
        self.convs, self.bns = [], []
        c = in_channels
        h, w = frame_size
        for width in widths:
            self.convs.append(Conv2d(c, width, 3, rng, padding=1, dtype=dtype))
            self.bns.append(BatchNorm(width, dtype=dtype))
            c = width
            h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise DimensionError(f"frame extractor: {len(widths)} pools do not fit {frame_size}")
        self.map_shape = (c, h, w)
        self.coords = circular_coords(h, w)
        self.sharpness = float(sharpness)
        self.proj = Linear(5 * c, d_f, rng, dtype=dtype)
        self.proj_bn = BatchNorm(d_f, dtype=dtype)
        self.d_f = d_f

    def frame_maps(self, clip: Tensor) -> Tensor:
        b, c, t, h, w = clip.shape
        x = reshape(transpose(clip, (0, 2, 1, 3, 4)), (b * t, c, h, w))
        for i, (conv, bn) in enumerate(zip(self.convs, self.bns)):
            try:
                x = maxpool2d(relu(bn(conv(x))), 2, 2)
            except DimensionError as exc:
                raise DimensionError(f"frame extractor block {i}: {exc}") from None
        return x

    def from_maps(self, maps: Tensor, batch: int, frames: int) -> Tensor:
        if tuple(maps.shape[1:]) != self.map_shape:
            raise DimensionError(f"frame extractor: maps {tuple(maps.shape[1:])}, expected {self.map_shape}")
        n, c = batch * frames, self.map_shape[0]
        where = reshape(spatial_expectation(maps * self.sharpness, self.coords), (n, 4 * c))
        what = mean(maps, axis=(2, 3))
        f = relu(self.proj_bn(self.proj(concat([what, where], axis=1))))
        return reshape(f, (batch, frames, self.d_f))

    def forward(self, clip: Tensor) -> Tensor:
        if clip.ndim != 5:
            raise DimensionError(f"expected a (B, C, T, H, W) clip, got {clip.shape}")
        return self.from_maps(self.frame_maps(clip), clip.shape[0], clip.shape[2])


def circular_coords(h: int, w: int) -> np.ndarray:
    """(h*w, 4) table of cos/sin of the row angle and the column angle."""
    rows = np.repeat(2 * np.pi * np.arange(h) / h, w)
    cols = np.tile(2 * np.pi * np.arange(w) / w, h)
    return np.stack([np.cos(rows), np.sin(rows), np.cos(cols), np.sin(cols)], axis=1)


def extract_frame_features(clip: Tensor, extractor: FrameFeatureExtractor) -> Tensor:
    return extractor(clip)


def sample_tuple(n: int, m: int, rng: Optional[np.random.Generator] = None) -> Tuple[int, ...]:
    """Strictly increasing frame indices for an m-frame relation.

    With an ``rng`` (train mode) m frames are drawn uniformly without
    replacement and put back in temporal order. Without one (eval mode) the
    evenly spaced tuple floor(k(n-1)/(m-1) + 1/2), k = 0..m-1, is returned.
    """
    if m < 2 or m > n:
        raise ValueError(f"relation scale must satisfy 2 <= m <= n, got m={m}, n={n}")
    if rng is not None:
        return tuple(int(i) for i in np.sort(rng.choice(n, size=m, replace=False)))
    return tuple(int(np.floor(k * (n - 1) / (m - 1) + 0.5)) for k in range(m))


class RelationScaleMLP(Module):
    """Two layers of width d_r, each followed by batch-norm and relu."""

    def __init__(self, m: int, d_f: int, d_r: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.m = m
        self.fc1 = Linear(m * d_f, d_r, rng, dtype=dtype)
        self.bn1 = BatchNorm(d_r, dtype=dtype)
        self.fc2 = Linear(d_r, d_r, rng, dtype=dtype)
        self.bn2 = BatchNorm(d_r, dtype=dtype)

    def forward(self, s: Tensor) -> Tensor:
        return relu(self.bn2(self.fc2(relu(self.bn1(self.fc1(s))))))


def relation_forward(features: Tensor, indices: Sequence[int], mlp: RelationScaleMLP) -> Tensor:
    """Concatenate the chosen frame features in tuple order and apply the scale MLP."""
    if len(indices) != mlp.m:
        raise ValueError(f"tuple of length {len(indices)} given to the scale-{mlp.m} relation")
    b, _, d_f = features.shape
    s = reshape(take(features, list(indices), axis=1), (b, mlp.m * d_f))
    return mlp(s)


def build_relation_bank(features: Tensor, mlps: Sequence[RelationScaleMLP], tuples_per_scale: int = 1,
                        rng: Optional[np.random.Generator] = None,
                        tuples_out: Optional[list] = None) -> Tensor:
    """Relation bank [R(s_2), ..., R(s_N)] of length d_r * (N - 1).

    In train mode (``rng`` given) each scale averages ``tuples_per_scale``
    relations over freshly sampled tuples; in eval mode a single deterministic
    tuple is used. ``tuples_out``, if given, receives the tuples used per scale.
    """
    n = features.shape[1]
    scales = [mlp.m for mlp in mlps]
    if scales != list(range(2, n + 1)):
        missing = sorted(set(range(2, n + 1)) - set(scales))
        raise ValueError(f"need one relation MLP per scale 2..{n} in order; missing {missing}, got {scales}")
    segments = []
    for mlp in mlps:
        k = tuples_per_scale if rng is not None else 1
        tuples = [sample_tuple(n, mlp.m, rng) for _ in range(k)]
        if tuples_out is not None:
            tuples_out.append(tuples)
        rel = relation_forward(features, tuples[0], mlp)
        for tup in tuples[1:]:
            rel = rel + relation_forward(features, tup, mlp)
        if k > 1:
            rel = rel * (1.0 / k)
        segments.append(rel)
    return concat(segments, axis=1)


class RelationBlock(Module):
    def __init__(self, frames: int, d_f: int, d_r: int, rng: np.random.Generator, dtype=DEFAULT_DTYPE):
        super().__init__()
        self.mlps: List[RelationScaleMLP] = [RelationScaleMLP(m, d_f, d_r, rng, dtype) for m in range(2, frames + 1)]
        self.d_r = d_r
        self.frames = frames

    @property
    def d_l(self) -> int:
        return self.d_r * (self.frames - 1)

    def segment(self, m: int) -> slice:
        return slice((m - 2) * self.d_r, (m - 1) * self.d_r)

    def forward(self, features: Tensor, rng: Optional[np.random.Generator] = None,
                tuples_per_scale: int = 1) -> Tensor:
        return build_relation_bank(features, self.mlps, tuples_per_scale, rng if self.training else None)
