"""Three-phase training schedule, checkpoints, and single-pathway baselines.

Phases run in the order holistic -> relation -> fusion. Each phase trains one
parameter group and freezes everything else; frozen modules also run in eval
mode, so their batch-norm statistics stay put and the relation block uses its
deterministic tuples.
"""
from __future__ import annotations

import json
import queue
import struct
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .core import SGD, Tensor, backward, clip_grad_norm, no_grad, reshape, softmax_cross_entropy
from .data import ClipDataset
from .fusion import ClassifierHead
from .metrics import EvalReport
from .model import GROUPS, ModelConfig, TwoPathwayNet
from .pathways import FrameFeatureExtractor

PHASE_MODE = {"holistic": "holistic", "relation": "relation", "fusion": "fused"}
REPORT_NAME = {"holistic": "holistic-only", "relation": "relation-only", "fusion": "fused"}


class ConfigError(ValueError):
    """Invalid plan or configuration."""


@dataclass(frozen=True)
class Phase:
    name: str
    epochs: int
    lr: float
    batch_size: int = 6
    seed: int = 0
    momentum: float = 0.9
    weight_decay: float = 5e-4
    train_extractor: bool = True
    clip_norm: Optional[float] = None  # global gradient-norm cap, None = off

    def __post_init__(self):
        if self.name not in GROUPS:
            raise ConfigError(f"unknown phase {self.name!r}; expected one of {GROUPS}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError(f"phase {self.name}: epochs >= 0, batch >= 1 and lr > 0 required")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError(f"phase {self.name}: clip_norm must be positive")


@dataclass(frozen=True)
class TrainPlan:
    phases: Tuple[Phase, ...]

    def validate(self) -> None:
        order = [GROUPS.index(p.name) for p in self.phases]
        if order != sorted(set(order)):
            raise ConfigError(
                f"phases must run in order holistic -> relation -> fusion, got {[p.name for p in self.phases]}"
            )

    def only(self, names: Sequence[str]) -> "TrainPlan":
        return TrainPlan(tuple(p for p in self.phases if p.name in names))


FULL_EPOCHS = (100, 100, 120)
FULL_LR = (1e-3, 1e-4)  # the fusion-phase rate is not given
FULL_BATCH = 6
FULL_MOMENTUM = 0.9
FULL_WEIGHT_DECAY = 5e-4


DESK_EPOCHS = (20, 20, 30)
DESK_LR = (1e-3, 1e-2, 1e-3)
DESK_CLIP_NORM = 20.0


def make_plan(epochs=DESK_EPOCHS, lrs=DESK_LR, batch_size: int = FULL_BATCH, seed: int = 42,
              momentum: float = FULL_MOMENTUM, weight_decay: float = FULL_WEIGHT_DECAY,
              train_extractor: bool = True, clip_norm: Optional[float] = DESK_CLIP_NORM) -> TrainPlan:
    phases = tuple(
        Phase(name, int(e), float(lr), batch_size, seed + i, momentum, weight_decay, train_extractor, clip_norm)
        for i, (name, e, lr) in enumerate(zip(GROUPS, epochs, lrs))
    )
    plan = TrainPlan(phases)
    plan.validate()
    return plan


def full_plan(fusion_lr: float = 1e-4, seed: int = 0) -> TrainPlan:
    return make_plan(FULL_EPOCHS, FULL_LR + (fusion_lr,), FULL_BATCH, seed, clip_norm=None)


def desk_plan(seed: int = 42) -> TrainPlan:
    return make_plan(DESK_EPOCHS, DESK_LR, FULL_BATCH, seed)


# ---------------------------------------------------------------- batching

def iter_batches(data: ClipDataset, order: np.ndarray, batch_size: int, dtype,
                 prefetch: int = 0) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Batches in ``order``; the last short batch is kept.

    With ``prefetch > 0`` a worker thread assembles batches into a queue of
    that capacity. Batches are produced strictly in index order, so results do
    not depend on thread timing.
    """
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if prefetch <= 0:
        for chunk in chunks:
            yield data.batch(chunk, dtype)
        return
    q: "queue.Queue" = queue.Queue(maxsize=prefetch)
    done = object()
    stop = threading.Event()

    def worker():
        for chunk in chunks:
            if stop.is_set():
                return
            q.put(data.batch(chunk, dtype))
        q.put(done)

    thread = threading.Thread(target=worker, daemon=True)
    thread.start()
    try:
        while True:
            item = q.get()
            if item is done:
                break
            yield item
    finally:
        stop.set()
        while thread.is_alive():
            try:
                q.get_nowait()
            except queue.Empty:
                thread.join(0.01)


# ---------------------------------------------------------------- run state

@dataclass
class LogEntry:
    phase: str
    epoch: int
    loss: float
    accuracy: float

    def line(self) -> str:
        return f"{self.phase},{self.epoch},{self.loss!r},{self.accuracy!r}"


@dataclass
class RunState:
    """Everything needed to resume: cursor, optimizer velocity, rng, history."""

    phase_index: int = 0
    epoch: int = 0  # epochs completed in the current phase
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Optional[dict] = None
    log: List[LogEntry] = field(default_factory=list)
    reports: Dict[str, str] = field(default_factory=dict)


def trainable_parameters(model: TwoPathwayNet, phase: Phase) -> list:
    params = model.group_parameters(phase.name)
    if phase.name == "relation" and not phase.train_extractor:
        frozen = {id(p) for p in model.frames.parameters()}
        params = [p for p in params if id(p) not in frozen]
    return params


def _set_phase_modes(model: TwoPathwayNet, phase: Phase, params: list) -> None:
    model.freeze(True)
    model.eval()
    for p in params:
        p.frozen = False
    for module in model.group(phase.name):
        if module is model.frames and not phase.train_extractor:
            continue
        module.train()


def _fusion_cache(model: TwoPathwayNet, data: ClipDataset, batch_size: int = 16) -> Dict[str, np.ndarray]:
    """Fusion-stage inputs for the whole dataset from the (frozen, eval-mode) pathways."""
    parts: Dict[str, list] = {}
    dtype = model.config.dtype
    with no_grad():
        for x, _ in iter_batches(data, np.arange(len(data)), batch_size, dtype):
            for key, t in model.fusion_inputs(Tensor(x)).items():
                parts.setdefault(key, []).append(t.data)
    return {k: np.concatenate(v) for k, v in parts.items()}


def run_phase(phase: Phase, model: TwoPathwayNet, data: ClipDataset, state: Optional[RunState] = None,
              on_epoch: Optional[Callable[[RunState], None]] = None, prefetch: int = 0) -> List[LogEntry]:
    """Train one phase. Returns the log entries added by this call."""
    if len(data) == 0:
        raise ConfigError("training set is empty")
    params = trainable_parameters(model, phase)
    if not params:
        raise ConfigError(f"phase {phase.name} has no trainable parameters")
    state = state or RunState()
    _set_phase_modes(model, phase, params)
    rng = np.random.default_rng(phase.seed)
    if state.rng_state is not None:
        rng.bit_generator.state = state.rng_state
    opt = SGD(params, phase.lr, phase.momentum, phase.weight_decay)
    opt.velocity = state.velocity
    dtype = model.config.dtype
    mode = PHASE_MODE[phase.name]
    cache = _fusion_cache(model, data) if phase.name == "fusion" and phase.epochs > state.epoch else None

    added = []
    for epoch in range(state.epoch, phase.epochs):
        order = rng.permutation(len(data))
        total_loss, correct = 0.0, 0
        if cache is not None:
            batches = (
                ({k: v[idx] for k, v in cache.items()}, data.labels[idx])
                for idx in (order[i:i + phase.batch_size] for i in range(0, len(order), phase.batch_size))
            )
        else:
            batches = iter_batches(data, order, phase.batch_size, dtype, prefetch)
        for x, y in batches:
            if cache is not None:
                logits = model.fused_logits({k: Tensor(v) for k, v in x.items()}, rng)
            else:
                logits = model(Tensor(x), mode, rng)
            loss, probs = softmax_cross_entropy(logits, y)
            opt.zero_grad()
            backward(loss)
            if phase.clip_norm is not None:
                clip_grad_norm(params, phase.clip_norm)
            opt.step()
            total_loss += loss.item() * len(y)
            correct += int((probs.argmax(axis=1) == y).sum())
        entry = LogEntry(phase.name, epoch, total_loss / len(data), correct / len(data))
        state.log.append(entry)
        added.append(entry)
        state.epoch = epoch + 1
        state.velocity = opt.velocity
        state.rng_state = rng.bit_generator.state
        if on_epoch is not None:
            on_epoch(state)
    model.eval()
    model.freeze(False)
    return added


def evaluate(model: TwoPathwayNet, data: ClipDataset, mode: str = "fused", batch_size: int = 16,
             class_names: Optional[Sequence[str]] = None) -> EvalReport:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    preds = []
    for x, _ in iter_batches(data, np.arange(len(data)), batch_size, model.config.dtype):
        preds.append(model.predict(Tensor(x), mode).argmax(axis=1))
    names = class_names or data.class_names or None
    return EvalReport.from_predictions(data.labels, np.concatenate(preds), model.config.classes, names)


def dataset_loss(model: TwoPathwayNet, data: ClipDataset, mode: str, batch_size: int = 16) -> float:
    """Mean cross-entropy over ``data`` in eval mode."""
    total = 0.0
    for x, y in iter_batches(data, np.arange(len(data)), batch_size, model.config.dtype):
        with no_grad():
            model.eval()
            loss, _ = softmax_cross_entropy(model(Tensor(x), mode), y)
        total += loss.item() * len(y)
    return total / len(data)


def run_plan(plan: TrainPlan, model: TwoPathwayNet, train: ClipDataset, test: ClipDataset,
             state: Optional[RunState] = None,
             on_epoch: Optional[Callable[[int, RunState], None]] = None,
             on_phase: Optional[Callable[[int, RunState], None]] = None,
             prefetch: int = 0) -> Tuple[TwoPathwayNet, RunState]:
    """Run every phase, evaluating on ``test`` after each one.

    Reports are keyed holistic-only / relation-only / fused and stored as text
    on the returned state. Passing a ``state`` from a checkpoint resumes.
    """
    plan.validate()
    state = state or RunState()
    for i in range(state.phase_index, len(plan.phases)):
        phase = plan.phases[i]
        if state.phase_index != i:
            state.phase_index, state.epoch, state.velocity, state.rng_state = i, 0, {}, None
        run_phase(phase, model, train, state,
                  on_epoch=(lambda s, i=i: on_epoch(i, s)) if on_epoch else None, prefetch=prefetch)
        report = evaluate(model, test, PHASE_MODE[phase.name])
        state.reports[REPORT_NAME[phase.name]] = report.to_text()
        state.phase_index, state.epoch, state.velocity, state.rng_state = i + 1, 0, {}, None
        if on_phase is not None:
            on_phase(i, state)
    return model, state


def holistic_only_head(model: TwoPathwayNet, seed: int = 0) -> ClassifierHead:
    head = ClassifierHead(model.config.d_g, model.config.classes, np.random.default_rng(seed), model.config.dtype)
    model.holistic_head = head
    model.name_parameters()
    return head


def relation_only_head(model: TwoPathwayNet, seed: int = 0) -> ClassifierHead:
    head = ClassifierHead(model.config.d_l, model.config.classes, np.random.default_rng(seed), model.config.dtype)
    model.relation_head = head
    model.name_parameters()
    return head


# ---------------------------------------------------------------- appearance baseline

class SingleFrameClassifier:
    """Frame extractor plus linear head, trained and tested on one random frame per clip."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.extractor = FrameFeatureExtractor(
            config.channels, config.frame_widths, (config.height, config.width), config.d_f, rng, config.dtype,
            config.sharpness,
        ).name_parameters("extractor.")
        self.head = ClassifierHead(config.d_f, config.classes, rng, config.dtype).name_parameters("head.")

    def parameters(self) -> list:
        return self.extractor.parameters() + self.head.parameters()

    def logits(self, frames: np.ndarray) -> Tensor:
        b = frames.shape[0]
        feats = self.extractor(Tensor(frames[:, :, None].astype(self.config.dtype)))
        return self.head(reshape(feats, (b, self.config.d_f)))

    def pick_frames(self, clips: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        t = rng.integers(clips.shape[2], size=clips.shape[0])
        return clips[np.arange(clips.shape[0]), :, t]

    def fit(self, data: ClipDataset, epochs: int, lr: float, batch_size: int = 6, seed: int = 0,
            momentum: float = 0.9, weight_decay: float = 5e-4) -> List[float]:
        rng = np.random.default_rng(seed)
        opt = SGD(self.parameters(), lr, momentum, weight_decay)
        losses = []
        self.extractor.train()
        for _ in range(epochs):
            order = rng.permutation(len(data))
            total = 0.0
            for i in range(0, len(order), batch_size):
                idx = order[i:i + batch_size]
                frames = self.pick_frames(data.clips[idx], rng)
                loss, _ = softmax_cross_entropy(self.logits(frames), data.labels[idx])
                opt.zero_grad()
                backward(loss)
                opt.step()
                total += loss.item() * len(idx)
            losses.append(total / len(data))
        self.extractor.eval()
        return losses

    def evaluate(self, data: ClipDataset, seed: int = 0) -> EvalReport:
        rng = np.random.default_rng(seed)
        self.extractor.eval()
        with no_grad():
            frames = self.pick_frames(data.clips, rng)
            preds = np.concatenate([
                self.logits(frames[i:i + 16]).data.argmax(axis=1) for i in range(0, len(frames), 16)
            ])
        return EvalReport.from_predictions(data.labels, preds, self.config.classes, data.class_names or None)


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"FUTHCKPT"
CKPT_VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("<i8"), 4: np.dtype("u1")}
_CODES = {v: k for k, v in _DTYPES.items()}


class CheckpointError(ValueError):
    pass


def encode_tensors(tensors: Dict[str, np.ndarray]) -> bytes:
    """Header (magic, version, count) then, per entry: name, dtype code, dims, payload."""
    out = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype.newbyteorder("<"))
        if code is None:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        key = name.encode()
        out.append(struct.pack("<I", len(key)) + key)
        out.append(struct.pack("<II", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(out)


def decode_tensors(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:8] != CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic at offset 0")
    try:
        version, count = struct.unpack_from("<II", buf, 8)
        if version != CKPT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version} at offset 8")
        pos = 16
        tensors = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, pos)
            name = buf[pos + 4:pos + 4 + n].decode()
            pos += 4 + n
            code, ndim = struct.unpack_from("<II", buf, pos)
            shape = struct.unpack_from(f"<{ndim}I", buf, pos + 8)
            pos += 8 + 4 * ndim
            dt = _DTYPES[code]
            size = int(np.prod(shape)) * dt.itemsize
            if pos + size > len(buf):
                raise CheckpointError(f"{name}: truncated payload at offset {pos}")
            tensors[name] = np.frombuffer(buf, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape).copy()
            pos += size
    except (struct.error, KeyError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes at offset {pos}")
    return tensors


def save_checkpoint(path, model: TwoPathwayNet, state: RunState) -> None:
    tensors = {f"param/{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"velocity/{k}": v for k, v in state.velocity.items()})
    meta = {
        "phase_index": state.phase_index,
        "epoch": state.epoch,
        "rng_state": state.rng_state,
        "log": [[e.phase, e.epoch, e.loss, e.accuracy] for e in state.log],
        "reports": state.reports,
    }
    tensors["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    Path(path).write_bytes(encode_tensors(tensors))


def load_checkpoint(path, model: TwoPathwayNet) -> RunState:
    tensors = decode_tensors(Path(path).read_bytes())
    meta = json.loads(tensors.pop("__meta__").tobytes().decode())
    params = {k[len("param/"):]: v for k, v in tensors.items() if k.startswith("param/")}
    expected = model.state_dict()
    for name, arr in params.items():
        if name in expected and expected[name].shape != arr.shape:
            raise ConfigError(
                f"checkpoint tensor {name} has shape {arr.shape} but the configured model expects "
                f"{expected[name].shape}"
            )
    model.load_state_dict(params)
    velocity = {k[len("velocity/"):]: v for k, v in tensors.items() if k.startswith("velocity/")}
    return RunState(
        phase_index=meta["phase_index"],
        epoch=meta["epoch"],
        velocity=velocity,
        rng_state=meta["rng_state"],
        log=[LogEntry(*row) for row in meta["log"]],
        reports=dict(meta["reports"]),
    )
