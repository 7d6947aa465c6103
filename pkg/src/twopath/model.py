"""The two-pathway classifier: holistic pathway, relation pathway, fusion, heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import DimensionError, Module, Tensor, global_avgpool3d, no_grad, reshape, transpose
from .fusion import ABLATION_METHODS, AblationFusion, ClassifierHead, FusionModule
from .pathways import DESK_POOLS, FrameFeatureExtractor, HolisticPathway, RelationBlock

GROUPS = ("holistic", "relation", "fusion")


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 1
    frames: int = 16
    height: int = 32
    width: int = 32
    classes: int = 4
    holistic_widths: Tuple[int, ...] = (8, 16, 64)
    holistic_kernels: Tuple[Tuple[int, int, int], ...] = ((3, 3, 3), (3, 3, 3), (3, 3, 3))
    holistic_pools: tuple = DESK_POOLS
    frame_widths: Tuple[int, ...] = (8, 16)
    d_f: int = 32
    d_r: int = 16
    tuples_per_scale: int = 1
    fusion_method: str = "film"
    fusion_append: str = "holistic"
    dropout: float = 0.5
    bilinear_rank: int = 8
    sharpness: float = 4.0
    precision: int = 32
    seed: int = 0

    @property
    def d_g(self) -> int:
        return self.holistic_widths[-1]

    @property
    def d_l(self) -> int:
        return self.d_r * (self.frames - 1)

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    @classmethod
    def full(cls, **overrides) -> "ModelConfig":
        """Full-size widths (d_g = d_f = 1024, d_r = 256, 16 frames).

        The backbone is a three-block stand-in for a deep 2D-inflated network;
        its last pool leaves a 2x7x7 volume on 16x32x32 input, matching the final 2x7x7
        average pool.
        """
        base = dict(
            channels=3,
            holistic_widths=(64, 192, 1024),
            holistic_kernels=((3, 3, 3), (3, 3, 3), (1, 1, 1)),
            holistic_pools=(((1, 3, 3), (1, 2, 2)), ((1, 3, 3), (1, 2, 2)), ((8, 1, 1), (8, 1, 1))),
            frame_widths=(64, 192),
            d_f=1024,
            d_r=256,
        )
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


class TwoPathwayNet(Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = np.random.default_rng(config.seed)
        dt = config.dtype
        self.holistic = HolisticPathway(
            config.channels, config.holistic_widths, (config.frames, config.height, config.width), rng,
            kernels=config.holistic_kernels, pools=config.holistic_pools, dtype=dt,
        )
        self.frames = FrameFeatureExtractor(
            config.channels, config.frame_widths, (config.height, config.width), config.d_f, rng, dtype=dt,
            sharpness=config.sharpness,
        )
        self.relation = RelationBlock(config.frames, config.d_f, config.d_r, rng, dtype=dt)
        d_g, d_l = config.d_g, config.d_l
        if config.fusion_method == "film":
            self.fusion = FusionModule(d_l, d_g, rng, config.fusion_append, config.dropout, dtype=dt)
        elif config.fusion_method in ABLATION_METHODS:
            self.fusion = AblationFusion(
                config.fusion_method, d_g, d_l, rng, rank=config.bilinear_rank,
                frame_channels=self.frames.map_shape[0], dtype=dt,
            )
        else:
            raise ValueError(f"unknown fusion method {config.fusion_method!r}")
        self.holistic_head = ClassifierHead(d_g, config.classes, rng, dtype=dt)
        self.relation_head = ClassifierHead(d_l, config.classes, rng, dtype=dt)
        self.head = ClassifierHead(self.fusion.out_dim, config.classes, rng, dtype=dt)
        self.name_parameters()

    def group(self, name: str) -> List[Module]:
        return {
            "holistic": [self.holistic, self.holistic_head],
            "relation": [self.frames, self.relation, self.relation_head],
            "fusion": [self.fusion, self.head],
        }[name]

    def group_parameters(self, name: str) -> list:
        return [p for m in self.group(name) for p in m.parameters()]

    @property
    def needs_volumes(self) -> bool:
        return isinstance(self.fusion, AblationFusion) and self.fusion.needs_volumes

    def _check_clip(self, clip: Tensor) -> None:
        c = self.config
        expected = (c.channels, c.frames, c.height, c.width)
        if clip.ndim != 5 or tuple(clip.shape[1:]) != expected:
            raise DimensionError(f"model expects clips (B, {', '.join(map(str, expected))}), got {clip.shape}")

    def relation_bank(self, clip: Tensor, rng=None) -> Tensor:
        feats = self.frames(clip)
        return self.relation(feats, rng, self.config.tuples_per_scale)

    def fusion_inputs(self, clip: Tensor, rng=None) -> Dict[str, Tensor]:
        """g, l and (for conv fusions) the feature volumes that feed the fusion stage."""
        self._check_clip(clip)
        out = {}
        if self.needs_volumes:
            vol = self.holistic.features(clip)
            out["g"] = global_avgpool3d(vol, self.holistic.final_kernel)
            maps = self.frames.frame_maps(clip)
            b, t = clip.shape[0], clip.shape[2]
            out["l"] = self.relation(self.frames.from_maps(maps, b, t), rng, self.config.tuples_per_scale)
            c, h, w = self.frames.map_shape
            out["holistic_volume"] = vol
            out["frame_volume"] = transpose(reshape(maps, (b, t, c, h, w)), (0, 2, 1, 3, 4))
        else:
            out["g"] = self.holistic(clip)
            out["l"] = self.relation_bank(clip, rng)
        return out

    def fused_logits(self, inputs: Dict[str, Tensor], rng=None) -> Tensor:
        if isinstance(self.fusion, FusionModule):
            z = self.fusion(inputs["g"], inputs["l"], rng)
        else:
            vols = {k: inputs[k] for k in ("holistic_volume", "frame_volume") if k in inputs}
            z = self.fusion(inputs["g"], inputs["l"], **vols)
        return self.head(z)

    def forward(self, clip: Tensor, mode: str = "fused", rng=None) -> Tensor:
        """Logits (B, K). ``mode`` is ``holistic``, ``relation`` or ``fused``."""
        self._check_clip(clip)
        if mode == "holistic":
            return self.holistic_head(self.holistic(clip))
        if mode == "relation":
            return self.relation_head(self.relation_bank(clip, rng))
        if mode == "fused":
            return self.fused_logits(self.fusion_inputs(clip, rng), rng)
        raise ValueError(f"unknown mode {mode!r}")

    def predict(self, clip: Tensor, mode: str = "fused") -> np.ndarray:
        was = [m.training for m in self.modules()]
        self.eval()
        try:
            with no_grad():
                logits = self.forward(clip, mode).data
        finally:
            for m, flag in zip(self.modules(), was):
                m.training = flag
        return logits


def with_fusion(config: ModelConfig, method: str, append: Optional[str] = None) -> ModelConfig:
    return replace(config, fusion_method=method, fusion_append=append or config.fusion_append)
