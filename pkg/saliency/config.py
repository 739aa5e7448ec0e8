"""
Experiment configuration.

Config files are flat ``key = value`` text with ``#`` comments.  A line
``include = desk`` (a built-in preset) or ``include = other.cfg`` (a path
relative to the including file) is expanded in place, so later lines
override it.  Unknown keys and malformed values are rejected.

Supported keys::

    input_size = 64              # divisible by 32
    stub_channels = 16,32,48,64  # raw backbone stage widths
    level1_attention = dswsam    # dswsam | swsam | dirconv | none
    level4_attention = swsam     # swsam | dswsam | none
    attention_variant = full     # full | no_shuffle | no_weights | plain_sa | sge
    ktm = true
    ktm_mode = full              # full | sum_only | product_only
    epochs = 45
    batch_size = 8
    lr = 1e-4
    lr_decay = 0.1
    lr_decay_every = 30          # epochs; 0 disables decay
    augment = false              # random D4 op per sample and step
    seed = 0
    manifest =                   # image<TAB>mask list; empty = synthetic data
    synth_count = 8
    synth_min_objects = 1
    synth_max_objects = 2
    synth_low_contrast = 0.5
    synth_noise = 0.03
    eval_train = true
    out_dir = runs/gelenet
"""
from __future__ import annotations

import dataclasses
import logging
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, List, Optional, Tuple

from .backbone import BackboneConfig
from .constants import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_EPOCHS,
    DEFAULT_LR,
    DEFAULT_LR_DECAY,
    DEFAULT_LR_DECAY_EVERY,
    DESK_INPUT_SIZE,
    DESK_STUB_CHANNELS,
    FULL_INPUT_SIZE,
    FULL_STUB_CHANNELS,
    MIN_INPUT_SIZE,
    SIZE_MULTIPLE,
    THREADS_ENV,
)
from .errors import ConfigError
from .network import ModelSpec

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Schema and defaults
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    input_size: int = DESK_INPUT_SIZE
    stub_channels: Tuple[int, ...] = DESK_STUB_CHANNELS
    level1_attention: str = "dswsam"
    level4_attention: str = "swsam"
    attention_variant: str = "full"
    ktm: bool = True
    ktm_mode: str = "full"
    epochs: int = DEFAULT_EPOCHS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LR
    lr_decay: float = DEFAULT_LR_DECAY
    lr_decay_every: int = DEFAULT_LR_DECAY_EVERY
    augment: bool = False
    seed: int = 0
    manifest: str = ""
    synth_count: int = 8
    synth_min_objects: int = 1
    synth_max_objects: int = 2
    synth_low_contrast: float = 0.5
    synth_noise: float = 0.03
    eval_train: bool = True
    out_dir: str = os.path.join("runs", "gelenet")
    sources: List[str] = field(default_factory=list, compare=False, repr=False)

    def validate(self) -> "ExperimentConfig":
        if self.input_size % SIZE_MULTIPLE or self.input_size < MIN_INPUT_SIZE:
            raise ConfigError(
                f"input_size must be a multiple of {SIZE_MULTIPLE} no smaller than {MIN_INPUT_SIZE}, got {self.input_size}"
            )
        if len(self.stub_channels) != 4 or any(c <= 0 for c in self.stub_channels):
            raise ConfigError(f"stub_channels needs four positive widths, got {self.stub_channels}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if self.lr_decay_every < 0:
            raise ConfigError(f"lr_decay_every must be >= 0, got {self.lr_decay_every}")
        if self.synth_count < 1:
            raise ConfigError(f"synth_count must be >= 1, got {self.synth_count}")
        # model switches are checked by ModelSpec
        ModelSpec(
            backbone=BackboneConfig(self.input_size, self.stub_channels),
            level1_attention=self.level1_attention,
            level4_attention=self.level4_attention,
            attention_variant=self.attention_variant,
            ktm=self.ktm,
            ktm_mode=self.ktm_mode,
        )
        return self

    def replace(self, **changes: Any) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes).validate()

    def values(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "sources"}

    def to_text(self) -> str:
        """Resolved configuration in the file format, keys sorted."""
        lines = [f"# resolved from: {', '.join(self.sources) or 'defaults'}"]
        for key, value in sorted(self.values().items()):
            lines.append(f"{key} = {format_value(value)}")
        return "\n".join(lines) + "\n"


DEFAULTS: Dict[str, Any] = ExperimentConfig().values()

PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {
        "input_size": DESK_INPUT_SIZE,
        "stub_channels": DESK_STUB_CHANNELS,
        "epochs": 300,
        "batch_size": 8,
        "lr": 1e-4,
        "lr_decay_every": 0,
        "augment": False,
        "synth_count": 8,
    },
    "paper": {
        "input_size": FULL_INPUT_SIZE,
        "stub_channels": FULL_STUB_CHANNELS,
        "epochs": DEFAULT_EPOCHS,
        "batch_size": DEFAULT_BATCH_SIZE,
        "lr": DEFAULT_LR,
        "lr_decay": DEFAULT_LR_DECAY,
        "lr_decay_every": DEFAULT_LR_DECAY_EVERY,
        "augment": True,
    },
}

_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig) if f.name != "sources"}


# ---------------------------------------------------------------------------
# Value coercion
# ---------------------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def coerce(key: str, raw: Any) -> Any:
    """Convert *raw* (a string from a file or CLI) to the type of *key*."""
    if key not in _FIELD_TYPES:
        raise ConfigError(f"Unknown config key '{key}'")
    kind = _FIELD_TYPES[key]
    if not isinstance(raw, str):
        raw = format_value(raw)
    text = raw.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind.startswith("Tuple"):
            return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"Invalid value for '{key}': {raw!r} (expected {kind})") from None
    return text


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------

def parse_config_file(path: str, _stack: Optional[List[str]] = None) -> Dict[str, Any]:
    """Parse *path* into typed values, expanding includes in place."""
    stack = list(_stack or [])
    real = os.path.realpath(path)
    if real in stack:
        raise ConfigError(f"Include cycle: {' -> '.join(stack + [real])}")
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    stack.append(real)

    values: Dict[str, Any] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key == "include":
                values.update(_include(raw, os.path.dirname(os.path.abspath(path)), stack))
                continue
            try:
                values[key] = coerce(key, raw)
            except ConfigError as exc:
                raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return values


def _include(target: str, base_dir: str, stack: List[str]) -> Dict[str, Any]:
    if target in PRESETS:
        return dict(PRESETS[target])
    path = target if os.path.isabs(target) else os.path.join(base_dir, target)
    return parse_config_file(path, stack)


def resolve_config(
    path: Optional[str] = None,
    preset: Optional[str] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> ExperimentConfig:
    """CLI overrides > config file > preset > DEFAULTS."""
    merged = dict(DEFAULTS)
    sources: List[str] = []
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"Unknown preset '{preset}' (choose from {', '.join(PRESETS)})")
        merged.update(PRESETS[preset])
        sources.append(f"preset:{preset}")
    if path is not None:
        merged.update(parse_config_file(path))
        sources.append(path)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = coerce(key, value)
            sources.append(f"--{key.replace('_', '-')}")
    cfg = ExperimentConfig(**merged, sources=sources)
    cfg.validate()
    logger.debug("Resolved config from %s", sources or ["defaults"])
    return cfg


def write_resolved(cfg: ExperimentConfig, path: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(cfg.to_text())
    return path


def thread_limit() -> int:
    """Evaluation worker count from GELENET_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return 1
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return value
