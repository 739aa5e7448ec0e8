"""GeleNet saliency library -- autodiff core, network modules, metrics and data."""

from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import ExperimentConfig, resolve_config
from .data import Sample, SynthConfig, augment, load_manifest, save_dataset, synthesize
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    GeleNetError,
    NumericalError,
    ShapeError,
    TapeError,
)
from .metrics import MetricReport, aggregate, evaluate
from .network import GeleNet, ModelSpec, model_from_config
from .optim import Parameter, adam_step
from .predictor import hybrid_loss
from .tensor import Tensor, backward, no_grad
from .training import TrainResult, Trainer, evaluate_model, predict

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "GeleNet",
    "GeleNetError",
    "MetricReport",
    "ModelSpec",
    "NumericalError",
    "Parameter",
    "Sample",
    "ShapeError",
    "SynthConfig",
    "TapeError",
    "Tensor",
    "TrainResult",
    "Trainer",
    "adam_step",
    "aggregate",
    "augment",
    "backward",
    "evaluate",
    "evaluate_model",
    "hybrid_loss",
    "load_checkpoint",
    "load_manifest",
    "model_from_config",
    "no_grad",
    "predict",
    "read_checkpoint",
    "resolve_config",
    "save_checkpoint",
    "save_dataset",
    "synthesize",
]
