"""
Partial-decoder saliency head and the hybrid IoU + BCE loss.
"""
from __future__ import annotations

import logging
from typing import Tuple, Union

import numpy as np

from .constants import FEATURE_CHANNELS, IOU_SMOOTH, LOSS_CLAMP
from .errors import NumericalError, ShapeError
from .layers import Conv2d, Module
from .tensor import (
    Tensor,
    add,
    bilinear_upsample,
    clamp,
    concat_channels,
    log,
    mul,
    reduce_mean,
    reduce_sum,
    sigmoid,
    sub,
)

logger = logging.getLogger(__name__)


class SaliencyPredictor(Module):
    """Cascade over (f_dswsa @ H/4, f_ktm @ H/16, f_swsa @ H/32) producing s @ H/4."""

    def __init__(self, prefix: str, rng: np.random.Generator, channels: int = FEATURE_CHANNELS) -> None:
        super().__init__(prefix)
        c = channels
        self.channels = c
        self.branch4 = Conv2d(self.path("branch4"), c, c, 3, rng)
        self.up4_to3 = Conv2d(self.path("up4_to3"), c, c, 3, rng)
        self.branch3 = Conv2d(self.path("branch3"), c, c, 3, rng)
        self.up4_to2 = Conv2d(self.path("up4_to2"), c, c, 3, rng)
        self.up3_to2 = Conv2d(self.path("up3_to2"), c, c, 3, rng)
        self.branch2 = Conv2d(self.path("branch2"), c, c, 3, rng)
        self.merge3 = Conv2d(self.path("merge3"), 2 * c, 2 * c, 3, rng)
        self.merge2 = Conv2d(self.path("merge2"), 3 * c, c, 3, rng)
        self.head = Conv2d(self.path("head"), c, 1, 1, rng)

    def _check(self, low: Tensor, mid: Tensor, high: Tensor) -> None:
        for name, t in (("f_dswsa", low), ("f_ktm", mid), ("f_swsa", high)):
            if t.ndim != 4 or t.shape[1] != self.channels:
                raise ShapeError(f"{name} must have {self.channels} channels, got shape {t.shape}")
        h4 = high.shape[2]
        if mid.shape[2:] != (2 * h4, 2 * high.shape[3]) or low.shape[2:] != (8 * h4, 8 * high.shape[3]):
            raise ShapeError(
                f"inconsistent pyramid: f_dswsa {low.shape[2:]}, f_ktm {mid.shape[2:]}, f_swsa {high.shape[2:]}"
            )

    def logits(self, f_dswsa: Tensor, f_ktm: Tensor, f_swsa: Tensor) -> Tensor:
        self._check(f_dswsa, f_ktm, f_swsa)
        b4 = self.branch4(f_swsa)
        b3 = self.branch3(mul(f_ktm, bilinear_upsample(self.up4_to3(b4), 2)))
        b2 = self.branch2(mul(
            mul(f_dswsa, bilinear_upsample(self.up4_to2(b4), 8)),
            bilinear_upsample(self.up3_to2(b3), 4),
        ))
        merged = self.merge3(concat_channels([b3, bilinear_upsample(b4, 2)]))
        d = self.merge2(concat_channels([b2, bilinear_upsample(merged, 4)]))
        return self.head(d)

    def decode(self, f_dswsa: Tensor, f_ktm: Tensor, f_swsa: Tensor) -> Tensor:
        return sigmoid(self.logits(f_dswsa, f_ktm, f_swsa))

    __call__ = decode


def finalize(s: Tensor) -> Tensor:
    """Restore input resolution with a 4x bilinear upsample."""
    return bilinear_upsample(s, 4)


def _as_tensor(value: Union[Tensor, np.ndarray]) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def loss_terms(pred: Tensor, mask: Union[Tensor, np.ndarray]) -> Tuple[Tensor, Tensor]:
    """(IoU term, BCE term).  IoU is per image then batch-averaged; BCE averages every pixel."""
    gt = _as_tensor(mask)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and mask {gt.shape} differ")
    if pred.ndim != 4:
        raise ShapeError(f"loss expects (n, 1, H, W) maps, got {pred.shape}")
    if not (np.all(np.isfinite(pred.data)) and np.all(np.isfinite(gt.data))):
        raise NumericalError("loss input contains NaN or Inf")

    safe = clamp(pred, LOSS_CLAMP, 1.0 - LOSS_CLAMP)
    bce = -reduce_mean(add(mul(gt, log(safe)), mul(sub(1.0, gt), log(sub(1.0, safe)))))

    axes = (1, 2, 3)
    inter = reduce_sum(mul(pred, gt), axis=axes)
    union = sub(add(reduce_sum(pred, axis=axes), reduce_sum(gt, axis=axes)), inter)
    iou = sub(1.0, reduce_mean((inter + IOU_SMOOTH) / (union + IOU_SMOOTH)))
    return iou, bce


def hybrid_loss(pred: Tensor, mask: Union[Tensor, np.ndarray]) -> Tensor:
    iou, bce = loss_terms(pred, mask)
    return add(iou, bce)
