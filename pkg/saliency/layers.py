"""
Module base class and the convolution layer every network block is built from.
"""
from __future__ import annotations

from typing import Iterator, List, Optional

import numpy as np

from .errors import ConfigError, ShapeError
from .optim import Parameter, kaiming_normal
from .tensor import Tensor, conv2d, mul


class Module:
    """Container that discovers its parameters and sub-modules by attribute order."""

    def __init__(self, prefix: str) -> None:
        self.prefix = prefix

    def path(self, name: str) -> str:
        return f"{self.prefix}/{name}" if self.prefix else name

    def parameters(self) -> List[Parameter]:
        found: List[Parameter] = []
        for value in vars(self).values():
            found.extend(_collect(value))
        return found

    def named_parameters(self) -> dict:
        named = {}
        for p in self.parameters():
            if p.name in named:
                raise ConfigError(f"Duplicate parameter name '{p.name}'")
            named[p.name] = p
        return named


def _collect(value) -> Iterator[Parameter]:
    if isinstance(value, Parameter):
        yield value
    elif isinstance(value, Module):
        yield from value.parameters()
    elif isinstance(value, (list, tuple)):
        for item in value:
            yield from _collect(item)


class Conv2d(Module):
    """2-D convolution with He-normal kernels and zero biases.

    An optional ``mask`` of shape ``(k, k)`` restricts the kernel support; the
    mask is applied in the forward pass and after every optimizer step.
    """

    def __init__(
        self,
        prefix: str,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: Optional[int] = None,
        bias: bool = True,
        mask: Optional[np.ndarray] = None,
    ) -> None:
        super().__init__(prefix)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = kernel_size // 2 if padding is None else padding

        shape = (out_channels, in_channels, kernel_size, kernel_size)
        full_mask = None
        support = kernel_size * kernel_size
        if mask is not None:
            if mask.shape != (kernel_size, kernel_size):
                raise ShapeError(f"{prefix}: mask shape {mask.shape} != kernel ({kernel_size}, {kernel_size})")
            full_mask = np.broadcast_to(mask, shape).astype(np.float64)
            support = int(np.count_nonzero(mask))
        self.weight = Parameter(
            self.path("weight"),
            Tensor(kaiming_normal(rng, shape, in_channels * support)),
            mask=full_mask,
        )
        self.bias = Parameter(self.path("bias"), Tensor(np.zeros(out_channels))) if bias else None

    def kernel(self) -> Tensor:
        w = self.weight.value
        return mul(w, self.weight.mask) if self.weight.mask is not None else w

    def __call__(self, x: Tensor) -> Tensor:
        b = self.bias.value if self.bias is not None else None
        return conv2d(x, self.kernel(), b, stride=self.stride, padding=self.padding)
