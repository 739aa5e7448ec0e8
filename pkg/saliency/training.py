"""
Training loop, learning-rate schedule and whole-dataset evaluation.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .config import ExperimentConfig
from .data import AUGMENT_OPS, Sample, SynthConfig, augment, iter_batches, load_manifest, stack, synthesize
from .errors import NumericalError
from .metrics import MetricReport, aggregate, evaluate
from .network import GeleNet, model_from_config
from .optim import adam_step
from .predictor import hybrid_loss
from .tensor import Tensor, backward, current_tape, no_grad

logger = logging.getLogger(__name__)

ProgressFn = Callable[[int, int, float], None]
EpochFn = Callable[[int, float, float], None]


def learning_rate(cfg: ExperimentConfig, epoch: int) -> float:
    """Step decay evaluated at epoch boundaries; ``lr_decay_every = 0`` keeps lr fixed."""
    if cfg.lr_decay_every <= 0:
        return cfg.lr
    return cfg.lr * cfg.lr_decay ** (epoch // cfg.lr_decay_every)


def load_dataset(cfg: ExperimentConfig) -> List[Sample]:
    if cfg.manifest:
        return load_manifest(cfg.manifest, cfg.input_size)
    return synthesize(SynthConfig(
        seed=cfg.seed,
        count=cfg.synth_count,
        size=cfg.input_size,
        min_objects=cfg.synth_min_objects,
        max_objects=cfg.synth_max_objects,
        low_contrast_fraction=cfg.synth_low_contrast,
        noise=cfg.synth_noise,
    ))


@dataclass
class TrainResult:
    losses: List[float] = field(default_factory=list)
    learning_rates: List[float] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.losses)

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "initial_loss": self.losses[0] if self.losses else None,
            "final_loss": self.losses[-1] if self.losses else None,
            "seconds": round(self.seconds, 3),
        }


class Trainer:
    """Adam on the hybrid loss over shuffled mini-batches.

    The shuffle and augmentation RNG is seeded from the config, so two
    trainers built from the same config and data produce the same trace.
    """

    def __init__(self, cfg: ExperimentConfig, samples: Sequence[Sample],
                 model: Optional[GeleNet] = None) -> None:
        self.cfg = cfg
        self.samples = list(samples)
        self.model = model if model is not None else model_from_config(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.on_progress: Optional[ProgressFn] = None
        self.on_epoch: Optional[EpochFn] = None
        self.result = TrainResult()

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.samples) / self.cfg.batch_size)

    @property
    def total_steps(self) -> int:
        return self.cfg.epochs * self.steps_per_epoch

    def step(self, images: np.ndarray, masks: np.ndarray, lr: float) -> float:
        current_tape().clear()
        loss = hybrid_loss(self.model(Tensor(images)), masks)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"loss became {value} after {len(self.result.losses)} iterations")
        backward(loss)
        adam_step(self.model.trainable(), lr)
        return value

    def _batch(self, indices: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        batch = [self.samples[i] for i in indices]
        if self.cfg.augment:
            batch = [augment(s, AUGMENT_OPS[int(self.rng.integers(len(AUGMENT_OPS)))]) for s in batch]
        return stack(batch)

    def fit(self) -> TrainResult:
        self.result = TrainResult()
        started = time.perf_counter()
        total = self.total_steps
        logger.info("Training %s on %d samples for %d iterations",
                    self.model.spec.describe(), len(self.samples), total)
        for epoch in range(self.cfg.epochs):
            lr = learning_rate(self.cfg, epoch)
            epoch_losses = []
            for indices in iter_batches(len(self.samples), self.cfg.batch_size, self.rng):
                images, masks = self._batch(indices)
                value = self.step(images, masks, lr)
                self.result.losses.append(value)
                self.result.learning_rates.append(lr)
                epoch_losses.append(value)
                if self.on_progress is not None:
                    self.on_progress(self.result.iterations, total, value)
            mean_loss = float(np.mean(epoch_losses))
            logger.debug("epoch %d lr %.3g loss %.6f", epoch + 1, lr, mean_loss)
            if self.on_epoch is not None:
                self.on_epoch(epoch + 1, lr, mean_loss)
        self.result.seconds = time.perf_counter() - started
        return self.result


# ---------------------------------------------------------------------------
# Inference and evaluation
# ---------------------------------------------------------------------------

def predict(model: GeleNet, images: np.ndarray, batch_size: int = 8) -> np.ndarray:
    """(n, H, W) saliency maps for an (n, 3, H, W) batch, without recording a tape."""
    maps = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            maps.append(model(Tensor(images[start:start + batch_size])).data[:, 0])
    return np.concatenate(maps, axis=0)


def evaluate_model(model: GeleNet, samples: Sequence[Sample],
                   batch_size: int = 8) -> Tuple[List[Tuple[str, MetricReport]], MetricReport]:
    images, masks = stack(samples)
    maps = predict(model, images, batch_size)
    per_image = [(s.id, evaluate(m, s.mask[0])) for s, m in zip(samples, maps)]
    return per_image, aggregate([r for _, r in per_image])
