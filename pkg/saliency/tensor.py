"""
Dense 64-bit tensors with tape-based reverse-mode differentiation.

Every differentiable operation computes its forward value with numpy and, when
any input requires a gradient, appends a ``TapeEntry`` to the thread-local
``Tape``.  ``backward`` replays the tape in reverse, accumulating gradients
into every recorded tensor, and clears the tape afterwards.

Layout is row-major ``(n, c, h, w)`` for feature maps; 2-D and batched 2-D
views are used by ``matmul`` and ``softmax_rows``.
"""
from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .constants import UPSAMPLE_FACTORS
from .errors import ConfigError, NumericalError, ShapeError, TapeError

Operand = Union["Tensor", np.ndarray, float, int]
BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


# ---------------------------------------------------------------------------
# Tensor
# ---------------------------------------------------------------------------

class Tensor:
    """A real array with an optional gradient buffer and a tape record."""

    __slots__ = ("data", "requires_grad", "grad", "_tape_index", "__weakref__")

    def __init__(self, data: Operand, requires_grad: bool = False) -> None:
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._tape_index: Optional[int] = None

    @classmethod
    def _wrap(cls, array: np.ndarray, requires_grad: bool) -> Tensor:
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out._tape_index = None
        return out

    # -- Introspection ------------------------------------------------------

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- Operators ----------------------------------------------------------

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> Tensor:
        return div(other, self)

    def __neg__(self) -> Tensor:
        return mul(self, -1.0)

    def __matmul__(self, other: Tensor) -> Tensor:
        return matmul(self, other)

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return reduce_sum(self, axis, keepdims)

    def mean(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> Tensor:
        return reduce_mean(self, axis, keepdims)

    def reshape(self, *shape: int) -> Tensor:
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)


def tensor(data: Operand, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def _lift(value: Operand) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# ---------------------------------------------------------------------------
# Tape
# ---------------------------------------------------------------------------

@dataclass
class TapeEntry:
    """One recorded operation."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of the operations of one forward pass."""

    def __init__(self) -> None:
        self.entries: List[TapeEntry] = []
        self.enabled = True

    def record(self, op: str, inputs: Tuple[Tensor, ...], output: Tensor, backward: BackwardFn) -> None:
        output._tape_index = len(self.entries)
        self.entries.append(TapeEntry(op, inputs, output, backward))

    def clear(self) -> None:
        self.entries.clear()

    def __len__(self) -> int:
        return len(self.entries)


_local = threading.local()

# op name -> multiplier applied to the input gradients of that op (gradcheck negative control)
_corrupted: Dict[str, float] = {}


def current_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Evaluate without recording anything on the tape."""
    tape = current_tape()
    previous = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = previous


@contextlib.contextmanager
def corrupted_backward(op: str, scale: float = 1.5) -> Iterator[None]:
    """Scale the backward rule of *op* so gradient checks must fail."""
    _corrupted[op] = scale
    try:
        yield
    finally:
        _corrupted.pop(op, None)


def _result(op: str, data: np.ndarray, inputs: Tuple[Tensor, ...], backward: BackwardFn) -> Tensor:
    tape = current_tape()
    needs_grad = tape.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, out, backward)
    return out


def _accumulate(t: Tensor, grad: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.array(grad, dtype=np.float64)
    else:
        t.grad = t.grad + grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every recorded tensor."""
    if loss.data.size != 1:
        raise TapeError(f"backward needs a scalar loss, got shape {loss.shape}")

    tape = current_tape()
    idx = loss._tape_index
    if idx is None or idx >= len(tape.entries) or tape.entries[idx].output is not loss:
        raise TapeError(
            "loss is not on the current tape; backward was already called "
            "or the forward pass ran without gradient recording"
        )

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owners: Dict[int, Tensor] = {id(loss): loss}

    for entry in reversed(tape.entries[: idx + 1]):
        key = id(entry.output)
        g = grads.pop(key, None)
        if g is None:
            continue
        owners.pop(key, None)
        _accumulate(entry.output, g)

        input_grads = entry.backward(g)
        scale = _corrupted.get(entry.op)
        for inp, ig in zip(entry.inputs, input_grads):
            if ig is None or not inp.requires_grad:
                continue
            if scale is not None:
                ig = ig * scale
            if not np.all(np.isfinite(ig)):
                raise NumericalError(f"non-finite gradient flowing out of '{entry.op}'")
            k = id(inp)
            grads[k] = grads[k] + ig if k in grads else ig
            owners[k] = inp

    # whatever is left are leaves (parameters and inputs)
    for k, g in grads.items():
        _accumulate(owners[k], g)

    tape.clear()


# ---------------------------------------------------------------------------
# Broadcasting arithmetic
# ---------------------------------------------------------------------------

def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    return _result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    return _result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    return _result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Operand, b: Operand) -> Tensor:
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    return _result(
        "div", a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
    )


# ---------------------------------------------------------------------------
# Pointwise functions
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def log(x: Tensor) -> Tensor:
    return _result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    r = np.sqrt(x.data)
    return _result("sqrt", r, (x,), lambda g: (g * 0.5 / r,))


def clamp(x: Tensor, lo: float, hi: float) -> Tensor:
    inside = (x.data >= lo) & (x.data <= hi)
    return _result("clamp", np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# ---------------------------------------------------------------------------
# Reductions and shape plumbing
# ---------------------------------------------------------------------------

def _expand_reduced(g: np.ndarray, shape: Tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _result(
        "sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims),),
    )


def reduce_mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return _result(
        "mean", np.mean(x.data, axis=axis, keepdims=keepdims), (x,),
        lambda g: (_expand_reduced(g, x.shape, axis, keepdims) / count,),
    )


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose2d(x: Tensor) -> Tensor:
    """Swap the last two axes."""
    if x.ndim < 2:
        raise ShapeError(f"transpose2d: need at least 2 axes, got shape {x.shape}")
    return _result("transpose2d", np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def _require_nchw(op: str, x: Tensor) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{op}: expected an (n, c, h, w) tensor, got shape {x.shape}")


def concat_channels(tensors: Sequence[Tensor]) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat_channels: nothing to concatenate")
    for t in tensors:
        _require_nchw("concat_channels", t)
        if t.shape[0] != tensors[0].shape[0] or t.shape[2:] != tensors[0].shape[2:]:
            raise ShapeError(
                f"concat_channels: shape {t.shape} does not match {tensors[0].shape} outside the channel axis"
            )
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def _backward(g: np.ndarray):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result("concat_channels", np.concatenate([t.data for t in tensors], axis=1), tensors, _backward)


def channel_slice(x: Tensor, start: int, stop: int) -> Tensor:
    _require_nchw("channel_slice", x)
    if not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"channel_slice: [{start}, {stop}) outside {x.shape[1]} channels")

    def _backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _result("channel_slice", x.data[:, start:stop], (x,), _backward)


def split_channels(x: Tensor, groups: int) -> List[Tensor]:
    """Split into *groups* consecutive, equally sized channel subsets."""
    _require_nchw("split_channels", x)
    c = x.shape[1]
    if groups < 1 or c % groups:
        raise ShapeError(f"split_channels: {c} channels are not divisible into {groups} groups")
    size = c // groups
    return [channel_slice(x, i * size, (i + 1) * size) for i in range(groups)]


def permute_channels(x: Tensor, perm: Sequence[int]) -> Tensor:
    _require_nchw("permute_channels", x)
    perm = np.asarray(perm, dtype=np.intp)
    if sorted(perm.tolist()) != list(range(x.shape[1])):
        raise ShapeError(f"permute_channels: not a permutation of {x.shape[1]} channels")
    inverse = np.argsort(perm)
    return _result("permute_channels", x.data[:, perm], (x,), lambda g: (g[:, inverse],))


def channel_max(x: Tensor) -> Tensor:
    """Max over channels, keeping a singleton channel axis."""
    _require_nchw("channel_max", x)
    idx = np.argmax(x.data, axis=1)[:, None]

    def _backward(g: np.ndarray):
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g, axis=1)
        return (full,)

    return _result("channel_max", np.take_along_axis(x.data, idx, axis=1), (x,), _backward)


def channel_mean(x: Tensor) -> Tensor:
    _require_nchw("channel_mean", x)
    return reduce_mean(x, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes (leading axes broadcast)."""
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must have at least 2 axes, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")

    def _backward(g: np.ndarray):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", a.data @ b.data, (a, b), _backward)


def softmax_rows(x: Tensor) -> Tensor:
    """Softmax along the last axis with per-row max subtraction."""
    if not np.all(np.isfinite(x.data)):
        raise NumericalError("softmax_rows: input contains NaN or Inf")
    z = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    s = z / z.sum(axis=-1, keepdims=True)
    return _result(
        "softmax_rows", s, (x,),
        lambda g: (s * (g - np.sum(g * s, axis=-1, keepdims=True)),),
    )


# ---------------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------------

def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of an (n, c_in, h, w) input with a (c_out, c_in, k_h, k_w) kernel."""
    _require_nchw("conv2d", x)
    if weight.ndim != 4:
        raise ShapeError(f"conv2d: weight must be (c_out, c_in, k_h, k_w), got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d: input has {x.shape[1]} channels but weight expects {c_in}")
    if stride < 1 or padding < 0:
        raise ShapeError(f"conv2d: invalid stride {stride} / padding {padding}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"conv2d: bias shape {bias.shape}, expected ({c_out},)")

    n, _, h, w = x.shape
    ho = conv_output_size(h, kh, stride, padding)
    wo = conv_output_size(w, kw, stride, padding)
    if ho < 1 or wo < 1:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit a padded {h}x{w} input")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    # (n, c_in, ho, wo, kh, kw)
    windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :ho, :wo]
    out = np.tensordot(windows, weight.data, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def _backward(g: np.ndarray):
        gw = np.tensordot(g, windows, axes=([0, 2, 3], [0, 2, 3]))
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        cols = np.tensordot(g, weight.data, axes=([1], [0]))  # (n, ho, wo, c_in, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += (
                    cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gxp[:, :, padding:padding + h, padding:padding + w]
        return (gx, gw, gb) if bias is not None else (gx, gw)

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    return _result("conv2d", np.ascontiguousarray(out), inputs, _backward)


# ---------------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------------

def bilinear_matrix(n_in: int, factor: int) -> np.ndarray:
    """(n_in*factor, n_in) interpolation matrix, align-corners-false convention."""
    n_out = n_in * factor
    m = np.zeros((n_out, n_in))
    for o in range(n_out):
        src = max((o + 0.5) / factor - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        frac = src - i0
        m[o, i0] += 1.0 - frac
        m[o, i1] += frac
    return m


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    _require_nchw("bilinear_upsample", x)
    if factor not in UPSAMPLE_FACTORS:
        raise ShapeError(f"bilinear_upsample: factor {factor} unsupported (use one of {UPSAMPLE_FACTORS})")
    mh = bilinear_matrix(x.shape[2], factor)
    mw = bilinear_matrix(x.shape[3], factor)
    return _result(
        "bilinear_upsample", mh @ x.data @ mw.T, (x,),
        lambda g: (mh.T @ g @ mw,),
    )


# ---------------------------------------------------------------------------
# Dispatcher
# ---------------------------------------------------------------------------

_ELEMENTWISE: Dict[str, Callable[..., object]] = {
    "add": add,
    "mul": mul,
    "sigmoid": sigmoid,
    "relu": relu,
    "concat_channels": lambda *ts: concat_channels(ts),
    "split_channels": split_channels,
    "bilinear_upsample": bilinear_upsample,
    "channel_max": channel_max,
    "channel_mean": channel_mean,
    "reshape": reshape,
    "transpose2d": transpose2d,
}


def elementwise(kind: str, *operands, **kwargs):
    """Apply one of the named pointwise / structural operations."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ConfigError(f"Unknown elementwise kind '{kind}' (choose from {sorted(_ELEMENTWISE)})") from None
    return fn(*operands, **kwargs)
