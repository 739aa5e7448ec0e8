"""
Shuffle-weighted spatial attention for the outer pyramid levels.

The level-1 variant first mines orientation cues with four line-shaped
convolutions (horizontal, vertical, leading and reverse diagonal), then
shuffles channels so every group carries every direction, gates each group
with CBAM-style spatial attention, and fuses the four gates with softmax
weights into a single map that enhances the shuffled features residually.
The level-4 variant skips the directional unit.

``mode`` switches in the component ablations: ``no_shuffle``, ``no_weights``
(frozen uniform fusion weights), ``plain_sa`` (one gate over all channels)
and ``sge`` (spatial group-wise enhancement over the four groups).
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from .constants import (
    ATTENTION_GROUPS,
    DIRECTIONAL_KERNEL,
    DIRECTIONAL_OUT_CHANNELS,
    DIRECTIONS,
    FEATURE_CHANNELS,
    FUSION_KERNEL,
    SA_KERNEL,
    SGE_EPS,
)
from .errors import ConfigError, ShapeError
from .layers import Conv2d, Module
from .optim import Parameter
from .tensor import (
    Tensor,
    add,
    channel_max,
    channel_mean,
    concat_channels,
    mul,
    permute_channels,
    reduce_mean,
    reduce_sum,
    reshape,
    sigmoid,
    softmax_rows,
    split_channels,
    sqrt,
    sub,
)

logger = logging.getLogger(__name__)

ATTENTION_MODES = ("full", "no_shuffle", "no_weights", "plain_sa", "sge")


# ---------------------------------------------------------------------------
# Directional convolution unit
# ---------------------------------------------------------------------------

def direction_mask(direction: str, size: int = DIRECTIONAL_KERNEL) -> np.ndarray:
    """Binary ``size x size`` support of a line kernel."""
    mid = size // 2
    mask = np.zeros((size, size))
    if direction == "h":
        mask[mid, :] = 1.0
    elif direction == "v":
        mask[:, mid] = 1.0
    elif direction == "ld":
        mask = np.eye(size)
    elif direction == "rd":
        mask = np.fliplr(np.eye(size)).copy()
    else:
        raise ConfigError(f"Unknown direction '{direction}' (choose from {DIRECTIONS})")
    return mask


class DirectionalConvUnit(Module):
    """Four 5-tap line convolutions, 32 -> 4 x 8 channels, concatenated as [h, v, ld, rd]."""

    def __init__(self, prefix: str, rng: np.random.Generator, channels: int = FEATURE_CHANNELS) -> None:
        super().__init__(prefix)
        self.channels = channels
        self.convs = [
            Conv2d(
                self.path(f"conv_{d}"), channels, DIRECTIONAL_OUT_CHANNELS, DIRECTIONAL_KERNEL, rng,
                padding=DIRECTIONAL_KERNEL // 2, mask=direction_mask(d),
            )
            for d in DIRECTIONS
        ]

    def branch(self, direction: str) -> Conv2d:
        return self.convs[DIRECTIONS.index(direction)]

    def __call__(self, f1: Tensor) -> Tensor:
        if f1.ndim != 4 or f1.shape[1] != self.channels:
            raise ShapeError(f"{self.prefix}: expected {self.channels} input channels, got shape {f1.shape}")
        return concat_channels([conv(f1) for conv in self.convs])


# ---------------------------------------------------------------------------
# Channel shuffle
# ---------------------------------------------------------------------------

def shuffle_permutation(channels: int, groups: int = ATTENTION_GROUPS) -> np.ndarray:
    """``perm`` such that ``out[:, i] = in[:, perm[i]]``; out[k*groups + d] = in[d*size + k]."""
    if channels % groups:
        raise ShapeError(f"channel shuffle: {channels} channels not divisible by {groups} groups")
    size = channels // groups
    return np.arange(channels).reshape(groups, size).T.reshape(-1)


def channel_shuffle(x: Tensor, groups: int = ATTENTION_GROUPS) -> Tensor:
    return permute_channels(x, shuffle_permutation(x.shape[1], groups))


def shuffle_and_split(f: Tensor, groups: int = ATTENTION_GROUPS, shuffle: bool = True) -> List[Tensor]:
    if f.ndim != 4 or f.shape[1] % groups:
        raise ShapeError(f"shuffle_and_split: channel count of {f.shape} not divisible by {groups}")
    return split_channels(channel_shuffle(f, groups) if shuffle else f, groups)


# ---------------------------------------------------------------------------
# Spatial attention and fusion
# ---------------------------------------------------------------------------

class SpatialAttention(Module):
    """sigmoid(conv7x7([max_c(x), mean_c(x)])) -> (n, 1, h, w)."""

    def __init__(self, prefix: str, rng: np.random.Generator) -> None:
        super().__init__(prefix)
        self.conv = Conv2d(self.path("conv"), 2, 1, SA_KERNEL, rng, padding=SA_KERNEL // 2, bias=False)

    def __call__(self, x: Tensor) -> Tensor:
        return sigmoid(self.conv(concat_channels([channel_max(x), channel_mean(x)])))


class WeightedAttentionFusion(Module):
    """a_ori = sigmoid(conv3x3(sum_n softmax(theta)_n * a_n))."""

    def __init__(self, prefix: str, rng: np.random.Generator, trainable: bool = True,
                 count: int = ATTENTION_GROUPS) -> None:
        super().__init__(prefix)
        self.count = count
        self.theta = Parameter(self.path("theta"), Tensor(np.zeros(count)), trainable=trainable)
        self.conv = Conv2d(self.path("conv"), 1, 1, FUSION_KERNEL, rng)

    def weights(self) -> np.ndarray:
        theta = self.theta.value.data
        z = np.exp(theta - theta.max())
        return z / z.sum()

    def fuse_input(self, maps: Sequence[Tensor]) -> Tensor:
        if len(maps) != self.count:
            raise ShapeError(f"{self.prefix}: expected {self.count} attention maps, got {len(maps)}")
        for m in maps:
            if m.shape != maps[0].shape or m.shape[1] != 1:
                raise ShapeError(f"{self.prefix}: attention map shapes differ ({m.shape} vs {maps[0].shape})")
        w = softmax_rows(reshape(self.theta.value, (1, self.count)))
        stacked = concat_channels(maps)
        return reduce_sum(mul(stacked, reshape(w, (1, self.count, 1, 1))), axis=1, keepdims=True)

    def __call__(self, maps: Sequence[Tensor]) -> Tensor:
        return sigmoid(self.conv(self.fuse_input(maps)))


def enhance(features: Tensor, attention: Tensor) -> Tensor:
    """(a ⊗ f) ⊕ f with a broadcast over channels."""
    return add(mul(attention, features), features)


# ---------------------------------------------------------------------------
# Spatial group-wise enhancement
# ---------------------------------------------------------------------------

class GroupEnhancement(Module):
    """Per-group pooled semantic vector, position-wise similarity, normalise, gate."""

    def __init__(self, prefix: str, groups: int = ATTENTION_GROUPS) -> None:
        super().__init__(prefix)
        self.groups = groups
        self.weight = Parameter(self.path("weight"), Tensor(np.zeros((1, groups, 1, 1))))
        self.bias = Parameter(self.path("bias"), Tensor(np.ones((1, groups, 1, 1))))

    def gate(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c % self.groups:
            raise ShapeError(f"{self.prefix}: {c} channels not divisible by {self.groups} groups")
        grouped = reshape(x, (n * self.groups, c // self.groups, h, w))
        pooled = reduce_mean(grouped, axis=(2, 3), keepdims=True)
        similarity = reshape(reduce_sum(mul(grouped, pooled), axis=1, keepdims=True), (n * self.groups, h * w))
        centred = sub(similarity, reduce_mean(similarity, axis=1, keepdims=True))
        variance = reduce_mean(mul(centred, centred), axis=1, keepdims=True)
        normed = reshape(centred / sqrt(add(variance, SGE_EPS)), (n, self.groups, h, w))
        return sigmoid(add(mul(normed, self.weight.value), self.bias.value))

    def __call__(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        gate = reshape(self.gate(x), (n * self.groups, 1, h, w))
        grouped = reshape(x, (n * self.groups, c // self.groups, h, w))
        return reshape(mul(grouped, gate), (n, c, h, w))


# ---------------------------------------------------------------------------
# Full module
# ---------------------------------------------------------------------------

class AttentionModule(Module):
    """D-SWSAM when ``directional`` is set, SWSAM otherwise.

    After each call ``last_maps`` holds numpy copies of the intermediate
    attention maps (``a1``..``a4``, ``a_ori``) for debug export.
    """

    def __init__(self, prefix: str, rng: np.random.Generator, directional: bool = True,
                 mode: str = "full", channels: int = FEATURE_CHANNELS) -> None:
        super().__init__(prefix)
        if mode not in ATTENTION_MODES:
            raise ConfigError(f"Unknown attention mode '{mode}' (choose from {', '.join(ATTENTION_MODES)})")
        self.mode = mode
        self.channels = channels
        self.directional = DirectionalConvUnit(self.path("dirconv"), rng, channels) if directional else None
        self.branches: List[SpatialAttention] = []
        self.fusion: Optional[WeightedAttentionFusion] = None
        self.single: Optional[SpatialAttention] = None
        self.sge: Optional[GroupEnhancement] = None
        if mode == "plain_sa":
            self.single = SpatialAttention(self.path("sa"), rng)
        elif mode == "sge":
            self.sge = GroupEnhancement(self.path("sge"))
        else:
            self.branches = [SpatialAttention(self.path(f"sa{i}"), rng) for i in range(1, ATTENTION_GROUPS + 1)]
            self.fusion = WeightedAttentionFusion(self.path("fusion"), rng, trainable=mode != "no_weights")
        self.last_maps: Dict[str, np.ndarray] = {}

    def orient(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise ShapeError(f"{self.prefix}: expected {self.channels} input channels, got shape {f.shape}")
        return self.directional(f) if self.directional is not None else f

    def attention(self, f_ori: Tensor) -> Tensor:
        """Fused map a_ori for the full / no_shuffle / no_weights modes."""
        subs = shuffle_and_split(f_ori, shuffle=self.mode != "no_shuffle")
        maps = [sa(sub) for sa, sub in zip(self.branches, subs)]
        a_ori = self.fusion(maps)
        self.last_maps = {f"a{i}": m.data.copy() for i, m in enumerate(maps, start=1)}
        self.last_maps["a_ori"] = a_ori.data.copy()
        return a_ori

    def __call__(self, f: Tensor, forced_attention: Optional[Tensor] = None) -> Tensor:
        f_ori = self.orient(f)

        if self.mode == "sge":
            self.last_maps = {}
            return self.sge(f_ori)
        if self.mode == "plain_sa":
            a = forced_attention if forced_attention is not None else self.single(f_ori)
            self.last_maps = {"a_ori": a.data.copy()}
            return enhance(f_ori, a)

        f_shuf = f_ori if self.mode == "no_shuffle" else channel_shuffle(f_ori)
        if forced_attention is not None:
            self.last_maps = {"a_ori": forced_attention.data.copy()}
            return enhance(f_shuf, forced_attention)
        return enhance(f_shuf, self.attention(f_ori))


def build_attention(prefix: str, kind: str, mode: str, rng: np.random.Generator) -> Optional[Module]:
    """Level attention by name: ``dswsam``, ``swsam``, ``dirconv`` or ``none``."""
    if kind == "dswsam":
        return AttentionModule(prefix, rng, directional=True, mode=mode)
    if kind == "swsam":
        return AttentionModule(prefix, rng, directional=False, mode=mode)
    if kind == "dirconv":
        return DirectionalConvUnit(f"{prefix}/dirconv", rng)
    if kind == "none":
        return None
    raise ConfigError(f"Unknown level attention '{kind}' (choose from dswsam, swsam, dirconv, none)")
