"""Exception types raised by the saliency library.

The CLI maps every subclass of ``NumericalError`` to exit code 2 and the
remaining ``GeleNetError`` subclasses to exit code 1.
"""
from __future__ import annotations


class GeleNetError(Exception):
    """Base class for all library errors."""


class ShapeError(GeleNetError, ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(GeleNetError, ValueError):
    """Experiment configuration is malformed or contains unknown keys."""


class DataError(GeleNetError, ValueError):
    """A dataset, manifest, or image could not be used."""


class CheckpointError(GeleNetError, ValueError):
    """A checkpoint file is corrupt or does not match the model."""


class TapeError(GeleNetError, RuntimeError):
    """``backward`` was called on something the tape cannot differentiate."""


class NumericalError(GeleNetError, ArithmeticError):
    """NaN/Inf values, divergent losses, or failed gradient checks."""
