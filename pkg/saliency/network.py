"""
Whole-model assembly.

``GeleNet`` wires backbone -> pyramid normalisation -> level attention (1 and
4) and knowledge transfer (2 + 3) -> partial decoder -> 4x upsample.  Each
module can be switched off; with everything off the model is the plain
baseline that fuses f2 and f3 by element-wise summation.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .attention import ATTENTION_MODES, AttentionModule, build_attention
from .backbone import BackboneConfig, FeaturePyramid, build_backbone, check_image
from .errors import ConfigError
from .ktm import KTM_MODES, KnowledgeTransfer
from .layers import Module
from .optim import Parameter
from .predictor import SaliencyPredictor, finalize
from .tensor import Tensor, add

logger = logging.getLogger(__name__)

LEVEL1_CHOICES = ("dswsam", "swsam", "dirconv", "none")
LEVEL4_CHOICES = ("swsam", "dswsam", "none")


@dataclass
class ModelSpec:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    level1_attention: str = "dswsam"
    level4_attention: str = "swsam"
    attention_variant: str = "full"
    ktm: bool = True
    ktm_mode: str = "full"

    def __post_init__(self) -> None:
        if self.level1_attention not in LEVEL1_CHOICES:
            raise ConfigError(f"level1_attention must be one of {LEVEL1_CHOICES}, got '{self.level1_attention}'")
        if self.level4_attention not in LEVEL4_CHOICES:
            raise ConfigError(f"level4_attention must be one of {LEVEL4_CHOICES}, got '{self.level4_attention}'")
        if self.attention_variant not in ATTENTION_MODES:
            raise ConfigError(f"attention_variant must be one of {ATTENTION_MODES}, got '{self.attention_variant}'")
        if self.ktm_mode not in KTM_MODES:
            raise ConfigError(f"ktm_mode must be one of {KTM_MODES}, got '{self.ktm_mode}'")

    def describe(self) -> str:
        parts = [
            f"level1={self.level1_attention}",
            f"ktm={self.ktm_mode if self.ktm else 'sum'}",
            f"level4={self.level4_attention}",
        ]
        if self.attention_variant != "full":
            parts.append(f"variant={self.attention_variant}")
        return ", ".join(parts)


@dataclass
class Prediction:
    saliency: Tensor                 # S at input resolution
    coarse: Tensor                   # s at 1/4 resolution
    pyramid: FeaturePyramid
    features: Dict[str, Tensor]      # f_dswsa, f_ktm, f_swsa


class GeleNet(Module):
    def __init__(self, spec: ModelSpec, seed: int = 0) -> None:
        super().__init__("")
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.extractor, self.normalizer = build_backbone(spec.backbone, rng)
        self.level1 = build_attention("level1", spec.level1_attention, spec.attention_variant, rng)
        self.ktm = KnowledgeTransfer("ktm", rng, mode=spec.ktm_mode) if spec.ktm else None
        self.level4 = build_attention("level4", spec.level4_attention, spec.attention_variant, rng)
        self.predictor = SaliencyPredictor("predictor", rng)
        self.named_parameters()  # rejects duplicate names early
        logger.debug("Built GeleNet (%s) with %d parameters", spec.describe(), self.size())

    def size(self) -> int:
        return int(sum(p.value.data.size for p in self.parameters()))

    def trainable(self) -> List[Parameter]:
        return [p for p in self.parameters() if p.trainable]

    def forward(self, image: Tensor) -> Prediction:
        check_image(image)
        if image.shape[2] != self.spec.backbone.input_size:
            logger.debug("Input size %d differs from configured %d", image.shape[2], self.spec.backbone.input_size)
        pyramid = self.normalizer(self.extractor(image))
        f_dswsa = self.level1(pyramid.f1) if self.level1 is not None else pyramid.f1
        f_ktm = self.ktm(pyramid.f2, pyramid.f3) if self.ktm is not None else add(pyramid.f2, pyramid.f3)
        f_swsa = self.level4(pyramid.f4) if self.level4 is not None else pyramid.f4
        s = self.predictor.decode(f_dswsa, f_ktm, f_swsa)
        return Prediction(
            saliency=finalize(s),
            coarse=s,
            pyramid=pyramid,
            features={"f_dswsa": f_dswsa, "f_ktm": f_ktm, "f_swsa": f_swsa},
        )

    def __call__(self, image: Tensor) -> Tensor:
        return self.forward(image).saliency

    def debug_maps(self) -> Dict[str, np.ndarray]:
        """Attention maps and the KTM correlation from the most recent forward pass."""
        maps: Dict[str, np.ndarray] = {}
        for label, module in (("level1", self.level1), ("level4", self.level4)):
            if isinstance(module, AttentionModule):
                maps.update({f"{label}_{k}": v for k, v in module.last_maps.items()})
        if self.ktm is not None and self.ktm.last_correlation is not None:
            maps["ktm_correlation"] = self.ktm.last_correlation
        return maps

    def fusion_weights(self) -> Dict[str, np.ndarray]:
        out: Dict[str, np.ndarray] = {}
        for label, module in (("level1", self.level1), ("level4", self.level4)):
            if isinstance(module, AttentionModule) and module.fusion is not None:
                out[label] = module.fusion.weights()
        return out


def model_from_config(cfg, seed: Optional[int] = None) -> GeleNet:
    """Build from any object with the ExperimentConfig model fields."""
    spec = ModelSpec(
        backbone=BackboneConfig(input_size=cfg.input_size, stub_channels=cfg.stub_channels),
        level1_attention=cfg.level1_attention,
        level4_attention=cfg.level4_attention,
        attention_variant=cfg.attention_variant,
        ktm=cfg.ktm,
        ktm_mode=cfg.ktm_mode,
    )
    return GeleNet(spec, seed=cfg.seed if seed is None else seed)
