"""Flat ``key = value`` run configuration.

Every key has a default. Lines are ``key = value``; blank lines and ``#``
comments are ignored. Unknown keys and malformed values are rejected with the
line number. ``RunConfig.effective()`` renders every resolved value, sorted, in
the same format, so it can be fed back in unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

from .data import MotionProgram, SyntheticTaskSpec
from .fusion import APPEND_CHOICES, FUSION_METHODS
from .model import ModelConfig
from .training import ConfigError, TrainPlan, make_plan


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _choice(options):
    def parse(text: str) -> str:
        text = text.strip()
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {text!r}")
        return text
    return parse


def _str(text: str) -> str:
    return text.strip()


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class Key:
    default: object
    parse: Callable[[str], object]
    doc: str


KEYS: Dict[str, Key] = {
    "seed": Key(42, int, "model init seed; phase i shuffles with seed + i"),
    "deterministic": Key(True, _bool, "pin BLAS to one thread so runs repeat bit for bit"),
    "threads": Key(1, int, "BLAS threads when deterministic is false"),
    "prefetch": Key(0, int, "capacity of the batch prefetch queue (0 = no worker thread)"),
    "model.preset": Key("desk", _choice(("desk", "full")), "base sizes before the overrides below"),
    "model.channels": Key(None, int, "input channels C"),
    "model.frames": Key(None, int, "frames per clip N"),
    "model.height": Key(None, int, "frame height"),
    "model.width": Key(None, int, "frame width"),
    "model.classes": Key(None, int, "class count K"),
    "model.holistic_widths": Key(None, _ints, "channel widths of the holistic blocks; last one is D_g"),
    "model.frame_widths": Key(None, _ints, "channel widths of the per-frame 2D blocks"),
    "model.d_f": Key(None, int, "per-frame feature width D_f"),
    "model.d_r": Key(None, int, "relation width D_r"),
    "model.tuples_per_scale": Key(None, int, "tuples averaged per relation scale in training"),
    "model.dropout": Key(None, float, "dropout rate inside the fusion transforms"),
    "model.bilinear_rank": Key(None, int, "rank of the bilinear fusion variant"),
    "model.sharpness": Key(None, float, "gain on the frame maps before the soft-argmax pooling"),
    "model.precision": Key(32, _choice(("32", "64")), "float width for parameters and activations"),
    "fusion.method": Key("film", _choice(FUSION_METHODS), "fusion method"),
    "fusion.append": Key("holistic", _choice(APPEND_CHOICES), "feature appended after modulation"),
    "train.epochs": Key((20, 20, 30), _ints, "epochs for the holistic, relation and fusion phases"),
    "train.lr": Key((1e-3, 1e-2, 1e-3), _floats, "learning rate per phase"),
    "train.clip_norm": Key(20.0, float, "cap on the global gradient norm per step (0 = no clipping)"),
    "train.batch": Key(6, int, "batch size"),
    "train.momentum": Key(0.9, float, "SGD momentum"),
    "train.weight_decay": Key(5e-4, float, "L2 weight decay"),
    "train.train_extractor": Key(True, _bool, "train the frame extractor in the relation phase"),
    "data.train": Key("", _str, "training manifest; empty = generate the synthetic set in memory"),
    "data.test": Key("", _str, "test manifest; empty = generate the synthetic set in memory"),
    "eval.batch": Key(16, int, "batch size for evaluation"),
    "synth.seed": Key(1, int, "seed for the synthetic training clips"),
    "synth.test_seed": Key(2, int, "seed for the synthetic test clips"),
    "synth.per_class": Key(50, int, "training clips per class"),
    "synth.test_per_class": Key(25, int, "test clips per class"),
    "synth.directions": Key("up,down,left,right", _str, "one class per motion direction"),
    "synth.speed": Key(1, int, "patch speed in pixels per frame"),
    "synth.reversal": Key(0, int, "frames between direction flips (0 = never)"),
    "synth.frames": Key(16, int, "frames per synthetic clip"),
    "synth.height": Key(32, int, "synthetic frame height"),
    "synth.width": Key(32, int, "synthetic frame width"),
    "synth.channels": Key(1, int, "synthetic channels"),
    "synth.noise": Key(0.05, float, "Gaussian noise standard deviation"),
    "synth.patch": Key(8, int, "moving patch side length"),
}

_MODEL_FIELDS = {
    "model.channels": "channels", "model.frames": "frames", "model.height": "height", "model.width": "width",
    "model.classes": "classes", "model.holistic_widths": "holistic_widths", "model.frame_widths": "frame_widths",
    "model.d_f": "d_f", "model.d_r": "d_r", "model.tuples_per_scale": "tuples_per_scale",
    "model.dropout": "dropout", "model.bilinear_rank": "bilinear_rank", "model.sharpness": "sharpness",
}


@dataclass
class RunConfig:
    values: Dict[str, object] = field(default_factory=dict)
    source: Optional[str] = None

    def __getitem__(self, key: str):
        if key not in KEYS:
            raise KeyError(key)
        return self.values.get(key, KEYS[key].default)

    def set(self, key: str, value) -> "RunConfig":
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        out = dict(self.values)
        out[key] = value
        return RunConfig(out, self.source)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        values: Dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip()
            if not sep:
                raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw.strip()!r}")
            if key not in KEYS:
                raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")
            if key in values:
                raise ConfigError(f"{source}:{lineno}: key {key!r} set twice")
            try:
                values[key] = KEYS[key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        cfg = cls(values, source)
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text, str(path))

    def check(self) -> None:
        for key in ("train.epochs", "train.lr"):
            if len(self[key]) != 3:
                raise ConfigError(f"{key} needs three comma-separated values, got {_fmt(self[key])}")
        if any(e < 0 for e in self["train.epochs"]) or any(lr <= 0 for lr in self["train.lr"]):
            raise ConfigError("epochs must be >= 0 and learning rates > 0")
        for key in ("train.batch", "eval.batch", "threads", "synth.per_class", "synth.test_per_class"):
            if self[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self["train.clip_norm"] < 0:
            raise ConfigError("train.clip_norm must be >= 0")
        if self["prefetch"] < 0:
            raise ConfigError("prefetch must be >= 0")
        self.synth_spec()
        self.model_config()

    def resolved(self) -> Dict[str, object]:
        """Every key with its effective value; preset-derived model sizes are filled in."""
        model = self.model_config()
        out = {}
        for key, spec in KEYS.items():
            value = self[key]
            if key in _MODEL_FIELDS:
                value = getattr(model, _MODEL_FIELDS[key])
            out[key] = value
        return out

    def effective(self) -> str:
        lines = [f"{k} = {_fmt(v)}" for k, v in sorted(self.resolved().items())]
        return "\n".join(lines) + "\n"

    # ------------------------------------------------------------ builders

    def model_config(self, classes: Optional[int] = None) -> ModelConfig:
        overrides = {f: self.values[k] for k, f in _MODEL_FIELDS.items() if k in self.values}
        overrides.update(
            fusion_method=self["fusion.method"],
            fusion_append=self["fusion.append"],
            precision=int(self["model.precision"]),
            seed=self["seed"],
        )
        if classes is not None and "model.classes" not in self.values:
            overrides["classes"] = classes
        if self["model.preset"] == "full":
            cfg = ModelConfig.full(**overrides)
        else:
            if "model.classes" not in self.values and classes is None:
                overrides["classes"] = len(self.synth_spec().classes)
            cfg = ModelConfig(**overrides)
        if len(cfg.holistic_widths) != len(cfg.holistic_kernels):
            raise ConfigError(
                f"model.holistic_widths has {len(cfg.holistic_widths)} entries; this preset has "
                f"{len(cfg.holistic_kernels)} holistic blocks"
            )
        if cfg.frames < 2 or cfg.classes < 1 or cfg.d_f < 1 or cfg.d_r < 1:
            raise ConfigError("model needs frames >= 2, classes >= 1 and positive widths")
        if not 0 <= cfg.dropout < 1:
            raise ConfigError(f"model.dropout must be in [0, 1), got {cfg.dropout}")
        return cfg

    def plan(self) -> TrainPlan:
        return make_plan(
            self["train.epochs"], self["train.lr"], self["train.batch"], self["seed"],
            self["train.momentum"], self["train.weight_decay"], self["train.train_extractor"],
            self["train.clip_norm"] or None,
        )

    def synth_spec(self) -> SyntheticTaskSpec:
        names = [d.strip() for d in self["synth.directions"].split(",") if d.strip()]
        if not names:
            raise ConfigError("synth.directions lists no classes")
        try:
            programs = tuple(MotionProgram(d, self["synth.speed"], self["synth.reversal"] or None) for d in names)
            for p in programs:
                p.offsets(1)
        except KeyError as exc:
            raise ConfigError(f"synth.directions: unknown direction {exc.args[0]!r}") from None
        if min(self["synth.height"], self["synth.width"]) < self["synth.patch"] or self["synth.patch"] < 1:
            raise ConfigError("synth.patch must fit inside the frame")
        return SyntheticTaskSpec(
            classes=programs, height=self["synth.height"], width=self["synth.width"],
            frames=self["synth.frames"], channels=self["synth.channels"], noise=self["synth.noise"],
            patch=self["synth.patch"],
        )


def describe_keys() -> List[str]:
    return [f"{k} (default {_fmt(v.default) if v.default is not None else 'from preset'}): {v.doc}"
            for k, v in sorted(KEYS.items())]


__all__ = ["KEYS", "RunConfig", "describe_keys"]
