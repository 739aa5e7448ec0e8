"""
Knowledge transfer between the two middle pyramid levels.

Queries come from the element-wise sum of f2 and f3, keys from their
product; the row-softmax of Q·K is a (hw x hw) correlation matrix C that
re-mixes value projections of each raw feature.  Residual scalars start at
zero, so a freshly built module is exactly ``conv3x3(f2 + f3)``.
"""
from __future__ import annotations

import logging
from typing import Optional, Tuple

import numpy as np

from .constants import FEATURE_CHANNELS
from .errors import ConfigError, ShapeError
from .layers import Conv2d, Module
from .optim import Parameter
from .tensor import Tensor, add, matmul, mul, reshape, softmax_rows, transpose2d

logger = logging.getLogger(__name__)

KTM_MODES = ("full", "sum_only", "product_only")


def combine(f2: Tensor, f3: Tensor) -> Tuple[Tensor, Tensor]:
    """Return ``(f2 * f3, f2 + f3)``."""
    if f2.shape != f3.shape:
        raise ShapeError(f"KTM inputs must share a shape, got {f2.shape} and {f3.shape}")
    return mul(f2, f3), add(f2, f3)


class KnowledgeTransfer(Module):
    def __init__(self, prefix: str, rng: np.random.Generator, mode: str = "full",
                 channels: int = FEATURE_CHANNELS) -> None:
        super().__init__(prefix)
        if mode not in KTM_MODES:
            raise ConfigError(f"Unknown KTM mode '{mode}' (choose from {', '.join(KTM_MODES)})")
        if channels % 2:
            raise ShapeError(f"KTM needs an even channel count, got {channels}")
        self.mode = mode
        self.channels = channels
        half = channels // 2
        self.query = Conv2d(self.path("query"), channels, half, 1, rng)
        self.key = Conv2d(self.path("key"), channels, half, 1, rng)
        self.value2 = Conv2d(self.path("value2"), channels, channels, 1, rng)
        self.value3 = Conv2d(self.path("value3"), channels, channels, 1, rng)
        self.gamma2 = Parameter(self.path("gamma2"), Tensor(np.zeros(1)))
        self.gamma3 = Parameter(self.path("gamma3"), Tensor(np.zeros(1)))
        self.integrate = Conv2d(self.path("integrate"), channels, channels, 3, rng)
        self.last_correlation: Optional[np.ndarray] = None

    def model_knowledge(self, f_pro: Tensor, f_sum: Tensor) -> Tensor:
        """Correlation matrix C, shape (n, hw, hw), rows summing to one."""
        if self.mode == "sum_only":
            q_src, k_src = f_sum, f_sum
        elif self.mode == "product_only":
            q_src, k_src = f_pro, f_pro
        else:
            q_src, k_src = f_sum, f_pro
        n, _, h, w = f_sum.shape
        half = self.channels // 2
        f_q = transpose2d(reshape(self.query(q_src), (n, half, h * w)))
        f_k = reshape(self.key(k_src), (n, half, h * w))
        return softmax_rows(matmul(f_q, f_k))

    def transfer(self, f2: Tensor, f3: Tensor, correlation: Tensor) -> Tensor:
        n, c, h, w = f2.shape
        if correlation.shape != (n, h * w, h * w):
            raise ShapeError(f"correlation must be {(n, h * w, h * w)}, got {correlation.shape}")
        c_t = transpose2d(correlation)
        fused = []
        for raw, value, gamma in ((f2, self.value2, self.gamma2), (f3, self.value3, self.gamma3)):
            v = reshape(value(raw), (n, c, h * w))
            tsf = reshape(matmul(v, c_t), (n, c, h, w))
            fused.append(add(mul(gamma.value, tsf), raw))
        return self.integrate(add(fused[0], fused[1]))

    def __call__(self, f2: Tensor, f3: Tensor) -> Tensor:
        if f2.ndim != 4 or f2.shape[1] != self.channels:
            raise ShapeError(f"{self.prefix}: expected {self.channels} channels, got shape {f2.shape}")
        f_pro, f_sum = combine(f2, f3)
        correlation = self.model_knowledge(f_pro, f_sum)
        self.last_correlation = correlation.data.copy()
        return self.transfer(f2, f3, correlation)
