"""
Datasets: seeded synthetic overhead scenes, D4 augmentation, manifest
loading, and PNG map I/O.

A synthetic scene is a textured background (low-frequency sinusoids plus
noise) with one or more oriented rectangles, ellipses or line segments;
the mask is exactly the union of object interiors, sampled at pixel
centres.  Sample ``i`` draws from ``default_rng(seed + i)`` so any subset
of a dataset can be regenerated independently.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from .constants import SIZE_MULTIPLE
from .errors import ConfigError, DataError, ShapeError

logger = logging.getLogger(__name__)

SHAPES = ("rectangle", "ellipse", "line")
AUGMENT_OPS = (
    "identity", "rot90", "rot180", "rot270",
    "hflip", "hflip_rot90", "hflip_rot180", "hflip_rot270",
)
MANIFEST_FILE = "manifest.tsv"
METADATA_FILE = "metadata.jsonl"

_LOW_CONTRAST = 0.12
_HIGH_CONTRAST = 0.45


# ---------------------------------------------------------------------------
# Dataclasses
# ---------------------------------------------------------------------------

@dataclass
class SynthObject:
    shape: str
    cx: float
    cy: float
    width: float
    height: float
    angle: float   # degrees in [0, 180)

    def rasterize(self, size: int) -> np.ndarray:
        """Boolean (size, size) interior, tested at pixel centres."""
        centres = np.arange(size) + 0.5
        px, py = np.meshgrid(centres, centres)
        theta = np.deg2rad(self.angle)
        dx, dy = px - self.cx, py - self.cy
        u = dx * np.cos(theta) + dy * np.sin(theta)
        v = -dx * np.sin(theta) + dy * np.cos(theta)
        half_w, half_h = self.width / 2.0, self.height / 2.0
        if self.shape == "rectangle":
            return (np.abs(u) < half_w) & (np.abs(v) < half_h)
        if self.shape == "ellipse":
            return (u / half_w) ** 2 + (v / half_h) ** 2 <= 1.0
        if self.shape == "line":
            return (np.abs(u) <= half_w) & (np.abs(v) <= max(half_h, 1.0))
        raise ConfigError(f"Unknown shape '{self.shape}' (choose from {SHAPES})")


@dataclass
class SynthConfig:
    seed: int = 0
    count: int = 8
    size: int = 64
    min_objects: int = 1
    max_objects: int = 2
    shapes: Tuple[str, ...] = SHAPES
    low_contrast_fraction: float = 0.5
    noise: float = 0.03
    waves: int = 3

    def __post_init__(self) -> None:
        self.shapes = tuple(self.shapes)
        if self.size % SIZE_MULTIPLE or self.size <= 0:
            raise ConfigError(f"synthetic size must be a positive multiple of {SIZE_MULTIPLE}, got {self.size}")
        if self.count < 1:
            raise ConfigError(f"synthetic count must be >= 1, got {self.count}")
        if not 1 <= self.min_objects <= self.max_objects:
            raise ConfigError(f"object range [{self.min_objects}, {self.max_objects}] is invalid")
        unknown = set(self.shapes) - set(SHAPES)
        if unknown or not self.shapes:
            raise ConfigError(f"unknown shapes {sorted(unknown)} (choose from {SHAPES})")
        if not 0.0 <= self.low_contrast_fraction <= 1.0:
            raise ConfigError("low_contrast_fraction must lie in [0, 1]")


@dataclass
class Sample:
    """One image / mask pair.  image is (3, H, W) in [0, 1]; mask is (1, H, W) in {0, 1}."""

    id: str
    image: np.ndarray
    mask: np.ndarray
    meta: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise ShapeError(f"sample '{self.id}': image must be (3, H, W), got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise ShapeError(f"sample '{self.id}': mask {self.mask.shape} does not match image {self.image.shape}")


# ---------------------------------------------------------------------------
# Synthesis
# ---------------------------------------------------------------------------

def _sample_layout(rng: np.random.Generator, cfg: SynthConfig) -> List[SynthObject]:
    """Draw object parameters; orientation is uniform on [0, 180)."""
    size = cfg.size
    count = int(rng.integers(cfg.min_objects, cfg.max_objects + 1))
    objects = []
    for _ in range(count):
        shape = str(cfg.shapes[int(rng.integers(len(cfg.shapes)))])
        angle = float(rng.uniform(0.0, 180.0))
        width = float(rng.uniform(0.2, 0.45)) * size
        if shape == "line":
            height = float(rng.uniform(1.5, 3.0))
        else:
            height = width * float(rng.uniform(0.3, 1.0))
        cx, cy = (float(v) for v in rng.uniform(0.25, 0.75, size=2) * size)
        objects.append(SynthObject(shape, cx, cy, width, height, angle))
    return objects


def _background(rng: np.random.Generator, cfg: SynthConfig) -> np.ndarray:
    size = cfg.size
    yy, xx = np.mgrid[0:size, 0:size] / size
    base = rng.uniform(0.25, 0.75, size=3)
    texture = np.zeros((size, size))
    for _ in range(cfg.waves):
        freq = rng.uniform(0.5, 3.0)
        direction = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        texture += np.sin(2.0 * np.pi * freq * (xx * np.cos(direction) + yy * np.sin(direction)) + phase)
    texture *= 0.1 / max(cfg.waves, 1)
    noise = rng.normal(0.0, cfg.noise, size=(3, size, size))
    return base[:, None, None] + texture[None] + noise


def render_sample(cfg: SynthConfig, index: int) -> Sample:
    rng = np.random.default_rng(cfg.seed + index)
    objects = _sample_layout(rng, cfg)
    mask = np.zeros((cfg.size, cfg.size), dtype=bool)
    for obj in objects:
        mask |= obj.rasterize(cfg.size)

    background = _background(rng, cfg)
    low = bool(rng.uniform() < cfg.low_contrast_fraction)
    offset = (_LOW_CONTRAST if low else _HIGH_CONTRAST) * rng.choice([-1.0, 1.0], size=3)
    # flip the offset where it would push the mean colour out of range
    base = background.mean(axis=(1, 2))
    offset = np.where((base + offset < 0.05) | (base + offset > 0.95), -offset, offset)
    foreground = background + offset[:, None, None]
    image = np.clip(np.where(mask[None], foreground, background), 0.0, 1.0)

    return Sample(
        id=f"synth_{index:05d}",
        image=image,
        mask=mask[None].astype(np.float64),
        meta={
            "objects": len(objects),
            "orientations": [round(o.angle, 6) for o in objects],
            "shapes": [o.shape for o in objects],
            "contrast": "low" if low else "high",
        },
    )


def synthesize(cfg: SynthConfig) -> List[Sample]:
    samples = [render_sample(cfg, i) for i in range(cfg.count)]
    empty = [s.id for s in samples if not s.mask.any()]
    if empty:
        raise DataError(f"synthetic samples without a salient object: {', '.join(empty)}")
    logger.info("Synthesised %d samples at %dx%d (seed %d)", cfg.count, cfg.size, cfg.size, cfg.seed)
    return samples


def write_metadata(samples: Sequence[Sample], path: str) -> str:
    """One JSON line per sample: id, object count, orientations in degrees."""
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps({"id": s.id, **s.meta}, ensure_ascii=False) + "\n")
    return path


# ---------------------------------------------------------------------------
# Augmentation (dihedral group D4)
# ---------------------------------------------------------------------------

def _transform(array: np.ndarray, op: str) -> np.ndarray:
    if op not in AUGMENT_OPS:
        raise ConfigError(f"Unknown augmentation '{op}' (choose from {', '.join(AUGMENT_OPS)})")
    flip = op.startswith("hflip")
    rotation = op.replace("hflip", "").strip("_") or "rot0"
    turns = {"identity": 0, "rot0": 0, "rot90": 1, "rot180": 2, "rot270": 3}[rotation]
    if turns % 2 and array.shape[-1] != array.shape[-2]:
        raise ShapeError(f"rotation '{op}' needs a square array, got {array.shape[-2:]}")
    out = np.rot90(array, turns, axes=(-2, -1))
    if flip:
        out = out[..., ::-1]
    return np.ascontiguousarray(out)


def augment(sample: Sample, op: str) -> Sample:
    """Apply rotation first, then the horizontal flip, to image and mask alike."""
    if op != "identity" and sample.image.shape[1] != sample.image.shape[2]:
        raise ShapeError(f"augmentation needs square samples, got {sample.image.shape[1:]}")
    return Sample(
        id=sample.id if op == "identity" else f"{sample.id}@{op}",
        image=_transform(sample.image, op),
        mask=_transform(sample.mask, op),
        meta=dict(sample.meta),
    )


def compose_ops(first: str, second: str) -> str:
    """Name of the single op equal to applying *first* then *second*."""
    probe = np.arange(9.0).reshape(3, 3)
    target = _transform(_transform(probe, first), second)
    for op in AUGMENT_OPS:
        if np.array_equal(_transform(probe, op), target):
            return op
    raise AssertionError(f"{first} then {second} left the D4 group")


# ---------------------------------------------------------------------------
# PNG I/O
# ---------------------------------------------------------------------------

def _open(path: str, mode: str) -> Image.Image:
    if not os.path.isfile(path):
        raise DataError(f"File not found: {path}")
    try:
        with Image.open(path) as img:
            return img.convert(mode)
    except (UnidentifiedImageError, OSError) as exc:
        raise DataError(f"Cannot read image {path}: {exc}") from exc


def load_image(path: str, size: Optional[int] = None) -> np.ndarray:
    """(3, H, W) float image in [0, 1], optionally bilinearly resized to size x size."""
    img = _open(path, "RGB")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.Resampling.BILINEAR)
    return np.asarray(img, dtype=np.float64).transpose(2, 0, 1) / 255.0


def load_mask(path: str, size: Optional[int] = None) -> np.ndarray:
    """(1, H, W) binary mask: nearest-neighbour resize, then >= 0.5 after scaling to [0, 1]."""
    img = _open(path, "L")
    if size is not None and img.size != (size, size):
        img = img.resize((size, size), Image.Resampling.NEAREST)
    return (np.asarray(img, dtype=np.float64)[None] / 255.0 >= 0.5).astype(np.float64)


def image_size(path: str) -> Tuple[int, int]:
    """(height, width) of an image on disk."""
    img = _open(path, "L")
    return img.size[1], img.size[0]


def save_map(values: np.ndarray, path: str) -> str:
    """Write a [0, 1] map as 8-bit grayscale, value = round(255 * S)."""
    values = np.squeeze(np.asarray(values, dtype=np.float64))
    if values.ndim != 2:
        raise ShapeError(f"save_map expects a single-channel map, got shape {values.shape}")
    pixels = np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


def load_map(path: str) -> np.ndarray:
    """(H, W) float map in [0, 1]."""
    return np.asarray(_open(path, "L"), dtype=np.float64) / 255.0


def save_image(image: np.ndarray, path: str) -> str:
    pixels = np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(pixels).save(path)
    return path


def resize_map(values: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resize of a 2-D float map."""
    values = np.asarray(values, dtype=np.float32)
    if values.shape == (height, width):
        return values.astype(np.float64)
    img = Image.fromarray(values).resize((width, height), Image.Resampling.BILINEAR)
    return np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)


def normalize_heatmap(values: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1] for visual inspection; constant maps become zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    return (values - lo) / (hi - lo) if hi > lo else np.zeros_like(values)


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------

def read_manifest(path: str) -> List[Tuple[str, str]]:
    """``[(image_path, mask_path)]`` resolved relative to the manifest."""
    if not os.path.isfile(path):
        raise DataError(f"Manifest not found: {path}")
    root = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 'image<TAB>mask', got {line!r}")
            pairs.append(tuple(os.path.join(root, p.strip()) for p in parts))
    if not pairs:
        raise DataError(f"Manifest {path} has no records")
    return pairs


def load_manifest(path: str, size: int) -> List[Sample]:
    samples = []
    for image_path, mask_path in read_manifest(path):
        stem = os.path.splitext(os.path.basename(image_path))[0]
        samples.append(Sample(id=stem, image=load_image(image_path, size), mask=load_mask(mask_path, size)))
    logger.info("Loaded %d samples from %s", len(samples), path)
    return samples


def save_dataset(samples: Sequence[Sample], directory: str) -> str:
    """Write images/, masks/, a manifest and the metadata sidecar.  Returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    lines = []
    for s in samples:
        image_rel = os.path.join("images", f"{s.id}.png")
        mask_rel = os.path.join("masks", f"{s.id}.png")
        save_image(s.image, os.path.join(directory, image_rel))
        save_map(s.mask[0], os.path.join(directory, mask_rel))
        lines.append(f"{image_rel}\t{mask_rel}\n")
    manifest = os.path.join(directory, MANIFEST_FILE)
    with open(manifest, "w", encoding="utf-8") as fh:
        fh.writelines(lines)
    write_metadata(samples, os.path.join(directory, METADATA_FILE))
    return manifest


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------

def iter_batches(count: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    """Shuffled index batches covering ``range(count)`` once; the last may be short."""
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def stack(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray]:
    """(n, 3, H, W) images and (n, 1, H, W) masks."""
    return np.stack([s.image for s in samples]), np.stack([s.mask for s in samples])
