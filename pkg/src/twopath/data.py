"""Clip files, manifests, fixed-rate frame sampling and the synthetic motion task.

Clip file layout (all little-endian)::

    offset 0   4 bytes   magic b"FUTH"
    offset 4   u32       version (1)
    offset 8   u32       dtype code (1 = float32)
    offset 12  4 x u32   T, C, H, W
    offset 28  T*C*H*W float32 payload, row-major
    end - 4    u32       class label

Readers reject bad magic/version/dtype, short payloads and trailing bytes.
"""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

MAGIC = b"FUTH"
VERSION = 1
DTYPE_F32 = 1
HEADER = struct.Struct("<4sII4I")


class ClipFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass
class VideoClip:
    frames: np.ndarray  # (T, C, H, W) float32
    label: int

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, VideoClip)
            and self.label == other.label
            and self.frames.shape == other.frames.shape
            and self.frames.tobytes() == other.frames.tobytes()
        )


def encode_clip(clip: VideoClip) -> bytes:
    frames = np.ascontiguousarray(clip.frames, dtype="<f4")
    if frames.ndim != 4:
        raise ValueError(f"clip frames must be (T, C, H, W), got {frames.shape}")
    if clip.label < 0:
        raise ValueError("label must be non-negative")
    return HEADER.pack(MAGIC, VERSION, DTYPE_F32, *frames.shape) + frames.tobytes() + struct.pack("<I", clip.label)


def decode_clip(buf: bytes) -> VideoClip:
    if len(buf) < HEADER.size:
        raise ClipFormatError(f"truncated header: {len(buf)} of {HEADER.size} bytes", len(buf))
    magic, version, dtype, t, c, h, w = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise ClipFormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise ClipFormatError(f"unsupported version {version}", 4)
    if dtype != DTYPE_F32:
        raise ClipFormatError(f"unsupported dtype code {dtype}", 8)
    payload = t * c * h * w * 4
    end = HEADER.size + payload
    if len(buf) < end:
        raise ClipFormatError(f"truncated payload: expected {payload} bytes", len(buf))
    if len(buf) < end + 4:
        raise ClipFormatError("missing label", len(buf))
    if len(buf) > end + 4:
        raise ClipFormatError(f"{len(buf) - end - 4} trailing bytes", end + 4)
    frames = np.frombuffer(buf, dtype="<f4", count=t * c * h * w, offset=HEADER.size)
    (label,) = struct.unpack_from("<I", buf, end)
    return VideoClip(frames.reshape(t, c, h, w).astype(np.float32), int(label))


def write_clip(path, clip: VideoClip) -> None:
    Path(path).write_bytes(encode_clip(clip))


def read_clip(path) -> VideoClip:
    return decode_clip(Path(path).read_bytes())


# ---------------------------------------------------------------- manifests

@dataclass
class DatasetManifest:
    entries: List[Tuple[str, int]]
    class_names: List[str]
    split: str = "train"

    def validate(self) -> None:
        seen = set()
        for path, idx in self.entries:
            if not 0 <= idx < len(self.class_names):
                raise ValueError(f"{path}: class index {idx} outside [0, {len(self.class_names)})")
            if path in seen:
                raise ValueError(f"duplicate manifest path {path}")
            seen.add(path)

    def __len__(self) -> int:
        return len(self.entries)


def write_manifest(path, manifest: DatasetManifest) -> None:
    manifest.validate()
    lines = [f"# split: {manifest.split}", f"# classes: {','.join(manifest.class_names)}"]
    lines += [f"{p}\t{i}" for p, i in manifest.entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path) -> DatasetManifest:
    """Read ``path<TAB>class_index`` lines; ``#`` lines carry split and class names."""
    entries, names, split = [], [], "train"
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].partition(":")
            if key.strip() == "split":
                split = value.strip()
            elif key.strip() == "classes":
                names = [v.strip() for v in value.split(",") if v.strip()]
            continue
        parts = raw.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{path}:{lineno}: expected 'path<TAB>class_index'")
        try:
            idx = int(parts[1])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: class index {parts[1]!r} is not an integer") from None
        entries.append((parts[0], idx))
    if not names:
        names = [str(i) for i in range(max((i for _, i in entries), default=-1) + 1)]
    manifest = DatasetManifest(entries, names, split)
    manifest.validate()
    return manifest


# ---------------------------------------------------------------- sampling

def sample_frames(total: int, n: int) -> List[int]:
    """n frames at the fixed stride floor(total / n), starting at frame 0."""
    if n < 1 or n > total:
        raise ValueError(f"cannot sample {n} frames from a {total}-frame clip")
    stride = total // n
    return [k * stride for k in range(n)]


@dataclass
class ClipDataset:
    """In-memory clips as a (N, C, T, H, W) array plus labels."""

    clips: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.labels)

    def batch(self, indices: Sequence[int], dtype=np.float32) -> Tuple[np.ndarray, np.ndarray]:
        idx = np.asarray(indices, dtype=np.intp)
        return self.clips[idx].astype(dtype, copy=False), self.labels[idx]


def load_dataset(manifest_path, frames: int) -> ClipDataset:
    """Load every clip of a manifest, sampling ``frames`` frames at a fixed rate."""
    manifest = read_manifest(manifest_path)
    if not manifest.entries:
        raise ValueError(f"manifest {manifest_path} lists no clips")
    base = Path(manifest_path).parent
    arrays, labels = [], []
    for rel, idx in manifest.entries:
        path = Path(rel) if os.path.isabs(rel) else base / rel
        clip = read_clip(path)
        if clip.label != idx:
            raise ValueError(f"{path}: file label {clip.label} disagrees with manifest label {idx}")
        sel = sample_frames(clip.frames.shape[0], frames)
        arrays.append(clip.frames[sel].transpose(1, 0, 2, 3))
        labels.append(idx)
    return ClipDataset(np.stack(arrays), np.asarray(labels, dtype=np.int64), manifest.class_names)


# ---------------------------------------------------------------- synthetic task

DIRECTIONS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


@dataclass(frozen=True)
class MotionProgram:
    direction: str
    speed: int = 1
    reversal_period: Optional[int] = None  # frames between direction flips

    @property
    def name(self) -> str:
        suffix = f"-rev{self.reversal_period}" if self.reversal_period else ""
        return f"{self.direction}{suffix}"

    def offsets(self, frames: int) -> np.ndarray:
        """(frames, 2) integer displacement (dy, dx) of the patch per frame."""
        dy, dx = DIRECTIONS[self.direction]
        steps = np.ones(frames, dtype=np.int64)
        steps[0] = 0
        if self.reversal_period:
            sign = np.where((np.arange(frames) - 1) // self.reversal_period % 2 == 0, 1, -1)
            steps = steps * sign
            steps[0] = 0
        travelled = np.cumsum(steps) * self.speed
        return np.stack([travelled * dy, travelled * dx], axis=1)


@dataclass(frozen=True)
class SyntheticTaskSpec:
    classes: Tuple[MotionProgram, ...] = tuple(MotionProgram(d, 1) for d in ("up", "down", "left", "right"))
    height: int = 32
    width: int = 32
    frames: int = 16
    channels: int = 1
    noise: float = 0.05
    patch: int = 8

    @property
    def class_names(self) -> List[str]:
        return [c.name for c in self.classes]


def generate_synthetic_clip(spec: SyntheticTaskSpec, label: int, seed: int) -> VideoClip:
    """A textured patch drifting over a static textured background.

    Background and patch texture, start position and noise are drawn from the
    same distributions for every class, so any single frame is uninformative
    about the label; only the motion program differs. Motion wraps around the
    frame edges.
    """
    if not 0 <= label < len(spec.classes):
        raise ValueError(f"class {label} outside [0, {len(spec.classes)})")
    rng = np.random.default_rng(seed)
    h, w, c, p = spec.height, spec.width, spec.channels, spec.patch
    coarse = rng.uniform(0.2, 0.5, size=(c, (h + 3) // 4, (w + 3) // 4))
    background = np.kron(coarse, np.ones((1, 4, 4)))[:, :h, :w]
    texture = rng.uniform(0.6, 1.0, size=(c, p, p))
    y0, x0 = int(rng.integers(h)), int(rng.integers(w))
    offsets = spec.classes[label].offsets(spec.frames)
    clip = np.empty((spec.frames, c, h, w))
    rows0, cols0 = np.arange(p), np.arange(p)
    for t, (dy, dx) in enumerate(offsets):
        frame = background.copy()
        rows = (y0 + dy + rows0) % h
        cols = (x0 + dx + cols0) % w
        frame[:, rows[:, None], cols[None, :]] = texture
        clip[t] = frame
    clip += rng.normal(0.0, spec.noise, size=clip.shape)
    return VideoClip(clip.astype(np.float32), label)


def synthetic_dataset(spec: SyntheticTaskSpec, per_class: int, seed: int) -> ClipDataset:
    """Balanced in-memory dataset; clip i of class k uses a seed derived from (seed, k, i)."""
    clips, labels = [], []
    for k in range(len(spec.classes)):
        for i in range(per_class):
            clip = generate_synthetic_clip(spec, k, clip_seed(seed, k, i))
            clips.append(clip.frames.transpose(1, 0, 2, 3))
            labels.append(k)
    return ClipDataset(np.stack(clips), np.asarray(labels, dtype=np.int64), spec.class_names)


def clip_seed(seed: int, label: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, label, index]).generate_state(1)[0])
