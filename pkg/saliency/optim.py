"""
Trainable parameters, Kaiming initialisation, and the Adam update.

Optimizer state lives on each ``Parameter`` so a checkpointed parameter set
is self-describing and the update is a pure function of the set.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .constants import ADAM_BETAS, ADAM_EPS
from .errors import TapeError
from .tensor import Tensor

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Parameter
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Parameter:
    """Named trainable tensor with Adam moment buffers."""

    name: str
    value: Tensor
    m: np.ndarray = field(init=False)
    v: np.ndarray = field(init=False)
    step_count: int = 0
    trainable: bool = True
    # structural zeros: entries where mask == 0 are forced to 0 after every step
    mask: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.value.requires_grad = self.trainable
        self.m = np.zeros_like(self.value.data)
        self.v = np.zeros_like(self.value.data)
        if self.mask is not None:
            self.apply_mask()

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def grad(self) -> Optional[np.ndarray]:
        return self.value.grad

    def apply_mask(self) -> None:
        if self.mask is not None:
            self.value.data *= self.mask

    def zero_grad(self) -> None:
        self.value.grad = None


def kaiming_normal(rng: np.random.Generator, shape: Sequence[int], fan_in: int) -> np.ndarray:
    """He-normal draw: N(0, 2 / fan_in)."""
    return rng.normal(0.0, np.sqrt(2.0 / max(fan_in, 1)), size=tuple(shape))


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

def adam_step(
    params: Iterable[Parameter],
    lr: float,
    betas: Tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
) -> None:
    """One bias-corrected Adam update; gradients are cleared afterwards."""
    b1, b2 = betas
    params = [p for p in params if p.trainable]

    missing = [p.name for p in params if p.value.grad is None]
    if missing:
        raise TapeError(f"No gradient for {len(missing)} parameter(s), e.g. '{missing[0]}'; run backward first")

    for p in params:
        g = p.value.grad
        p.step_count += 1
        t = p.step_count
        p.m = b1 * p.m + (1.0 - b1) * g
        p.v = b2 * p.v + (1.0 - b2) * g * g
        m_hat = p.m / (1.0 - b1 ** t)
        v_hat = p.v / (1.0 - b2 ** t)
        p.value.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
        p.apply_mask()
        p.zero_grad()
