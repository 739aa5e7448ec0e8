"""
Binary parameter checkpoints.

Layout::

    b"GELENET1"
    repeated until EOF:
        uint32 LE   name length in bytes
        bytes       UTF-8 parameter name
        uint32 LE   ndim
        uint32 LE   dims[ndim]
        float64 LE  values, row-major

Optimizer moments are not stored; a loaded model restarts Adam from zero.
"""
from __future__ import annotations

import logging
import os
import struct
from typing import Dict, Iterable, Tuple

import numpy as np

from .constants import CHECKPOINT_MAGIC
from .errors import CheckpointError
from .optim import Parameter

logger = logging.getLogger(__name__)

_U32 = struct.Struct("<I")


def save_checkpoint(path: str, params: Iterable[Parameter]) -> str:
    """Write *params* to *path* atomically.  Returns the path."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = path + ".tmp"
    count = 0
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        for p in params:
            name = p.name.encode("utf-8")
            data = np.ascontiguousarray(p.value.data, dtype="<f8")
            fh.write(_U32.pack(len(name)))
            fh.write(name)
            fh.write(_U32.pack(data.ndim))
            for dim in data.shape:
                fh.write(_U32.pack(dim))
            fh.write(data.tobytes())
            count += 1
    os.replace(tmp, path)
    logger.info("Saved %d parameters to %s", count, path)
    return path


def _read_u32(fh, what: str) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise CheckpointError(f"Truncated checkpoint while reading {what}")
    return _U32.unpack(raw)[0]


def read_checkpoint(path: str) -> Dict[str, np.ndarray]:
    """Return ``{name: array}`` in file order."""
    if not os.path.isfile(path):
        raise CheckpointError(f"Checkpoint not found: {path}")

    arrays: Dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path} is not a GELENET1 checkpoint (bad magic)")
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("Truncated checkpoint while reading name length")
            name_len = _U32.unpack(head)[0]
            raw_name = fh.read(name_len)
            if len(raw_name) != name_len:
                raise CheckpointError("Truncated checkpoint while reading parameter name")
            try:
                name = raw_name.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointError(f"Parameter name is not UTF-8: {exc}") from exc
            ndim = _read_u32(fh, f"ndim of '{name}'")
            shape: Tuple[int, ...] = tuple(_read_u32(fh, f"shape of '{name}'") for _ in range(ndim))
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            payload = fh.read(nbytes)
            if len(payload) != nbytes:
                raise CheckpointError(f"Truncated values for '{name}'")
            if name in arrays:
                raise CheckpointError(f"Duplicate parameter '{name}' in checkpoint")
            arrays[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(np.float64)
    return arrays


def load_checkpoint(path: str, params: Iterable[Parameter]) -> int:
    """Copy stored values into *params*.

    Every model parameter must be present with the same shape and the file
    must hold nothing else.  Returns the number of parameters loaded.
    """
    stored = read_checkpoint(path)
    params = list(params)
    expected = {p.name for p in params}

    missing = sorted(expected - stored.keys())
    extra = sorted(stored.keys() - expected)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing {len(missing)} (e.g. '{missing[0]}')")
        if extra:
            parts.append(f"unexpected {len(extra)} (e.g. '{extra[0]}')")
        raise CheckpointError(f"Checkpoint does not match the model: {', '.join(parts)}")

    for p in params:
        array = stored[p.name]
        if array.shape != p.shape:
            raise CheckpointError(
                f"Shape mismatch for '{p.name}': checkpoint {array.shape}, model {p.shape}"
            )
    for p in params:
        p.value.data[...] = stored[p.name]
        p.apply_mask()

    logger.info("Loaded %d parameters from %s", len(params), path)
    return len(params)
