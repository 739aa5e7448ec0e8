"""
Four-level feature extraction and pyramid normalisation.

``StubExtractor`` is a small trainable stand-in for a transformer backbone:
four stages of strided convolution pairs producing features at 1/4, 1/8,
1/16 and 1/32 of the input resolution.  Any object satisfying the
``Extractor`` protocol can replace it.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Protocol, Sequence, Tuple

import numpy as np

from .constants import DESK_INPUT_SIZE, DESK_STUB_CHANNELS, FEATURE_CHANNELS, MIN_INPUT_SIZE, SIZE_MULTIPLE
from .errors import ConfigError, ShapeError
from .layers import Conv2d, Module
from .tensor import Tensor, relu

logger = logging.getLogger(__name__)

STAGE_STRIDES = (4, 8, 16, 32)


@dataclass
class BackboneConfig:
    input_size: int = DESK_INPUT_SIZE
    stub_channels: Tuple[int, int, int, int] = DESK_STUB_CHANNELS

    def __post_init__(self) -> None:
        self.stub_channels = tuple(int(c) for c in self.stub_channels)
        if self.input_size % SIZE_MULTIPLE or self.input_size < MIN_INPUT_SIZE:
            raise ConfigError(
                f"input_size must be a positive multiple of {SIZE_MULTIPLE} "
                f"(>= {MIN_INPUT_SIZE}), got {self.input_size}"
            )
        if len(self.stub_channels) != 4 or any(c <= 0 for c in self.stub_channels):
            raise ConfigError(f"stub_channels needs four positive counts, got {self.stub_channels}")


@dataclass
class FeaturePyramid:
    """Channel-normalised features; f2 and f3 share one spatial size."""

    f1: Tensor
    f2: Tensor
    f3: Tensor
    f4: Tensor

    def shapes(self) -> List[Tuple[int, ...]]:
        return [self.f1.shape, self.f2.shape, self.f3.shape, self.f4.shape]


class Extractor(Protocol):
    stage_channels: Tuple[int, int, int, int]

    def __call__(self, image: Tensor) -> List[Tensor]: ...

    def parameters(self) -> list: ...


def check_image(image: Tensor) -> int:
    """Validate an ``(n, 3, H, H)`` batch and return H."""
    if image.ndim != 4 or image.shape[1] != 3:
        raise ShapeError(f"image batch must be (n, 3, H, W), got {image.shape}")
    h, w = image.shape[2:]
    if h != w:
        raise ShapeError(f"image must be square, got {h}x{w}")
    if h % SIZE_MULTIPLE or h < MIN_INPUT_SIZE:
        raise ShapeError(f"image size {h} is not a multiple of {SIZE_MULTIPLE} (minimum {MIN_INPUT_SIZE})")
    return h


class StubExtractor(Module):
    """Plain-convolution backbone: stage i halves resolution i+1 times in total."""

    def __init__(self, cfg: BackboneConfig, rng: np.random.Generator, prefix: str = "backbone") -> None:
        super().__init__(prefix)
        self.stage_channels = cfg.stub_channels
        c1, c2, c3, c4 = cfg.stub_channels
        self.stages = [
            (Conv2d(self.path("stage1/conv_a"), 3, c1, 3, rng, stride=2),
             Conv2d(self.path("stage1/conv_b"), c1, c1, 3, rng, stride=2)),
        ]
        for i, (c_in, c_out) in enumerate(((c1, c2), (c2, c3), (c3, c4)), start=2):
            self.stages.append((
                Conv2d(self.path(f"stage{i}/conv_a"), c_in, c_out, 3, rng, stride=2),
                Conv2d(self.path(f"stage{i}/conv_b"), c_out, c_out, 3, rng, stride=1),
            ))

    def __call__(self, image: Tensor) -> List[Tensor]:
        check_image(image)
        feats: List[Tensor] = []
        x = image
        for conv_a, conv_b in self.stages:
            x = relu(conv_b(relu(conv_a(x))))
            feats.append(x)
        return feats


class PyramidNormalizer(Module):
    """1x1 convolutions to 32 channels; level 2 is also halved by a strided 3x3 conv."""

    def __init__(self, stage_channels: Sequence[int], rng: np.random.Generator, prefix: str = "normalize") -> None:
        super().__init__(prefix)
        self.stage_channels = tuple(stage_channels)
        self.projections = [
            Conv2d(self.path(f"level{i}"), c, FEATURE_CHANNELS, 1, rng)
            for i, c in enumerate(self.stage_channels, start=1)
        ]
        self.reduce2 = Conv2d(self.path("level2_reduce"), FEATURE_CHANNELS, FEATURE_CHANNELS, 3, rng, stride=2)

    def __call__(self, raw: Sequence[Tensor]) -> FeaturePyramid:
        if len(raw) != 4:
            raise ShapeError(f"expected four backbone stages, got {len(raw)}")
        base = raw[0].shape[2] * 4
        for i, (feat, channels, stride) in enumerate(zip(raw, self.stage_channels, STAGE_STRIDES), start=1):
            expected = (channels, base // stride, base // stride)
            if feat.ndim != 4 or feat.shape[1:] != expected:
                raise ShapeError(f"stage {i} should be (n, {expected[0]}, {expected[1]}, {expected[2]}), got {feat.shape}")

        f1, f2, f3, f4 = (proj(feat) for proj, feat in zip(self.projections, raw))
        return FeaturePyramid(f1=f1, f2=self.reduce2(f2), f3=f3, f4=f4)


def build_backbone(cfg: BackboneConfig, rng: np.random.Generator) -> Tuple[StubExtractor, PyramidNormalizer]:
    extractor = StubExtractor(cfg, rng)
    normalizer = PyramidNormalizer(extractor.stage_channels, rng)
    logger.debug("Stub backbone channels %s at input %d", cfg.stub_channels, cfg.input_size)
    return extractor, normalizer
