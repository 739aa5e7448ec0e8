"""
Saliency evaluation metrics.

Pure functions and lightweight dataclasses -- no I/O, no side effects.
Maps are 2-D arrays: predictions in [0, 1], ground truth binary.  Every
threshold sweep binarises with ``S >= t / 255`` for t = 0..255.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .constants import BETA_SQUARED, METRIC_EPS, NUM_THRESHOLDS, S_ALPHA
from .errors import DataError, ShapeError

THRESHOLDS = np.arange(NUM_THRESHOLDS) / (NUM_THRESHOLDS - 1)

SCALAR_FIELDS = ("s_measure", "f_max", "f_mean", "f_adp", "e_max", "e_mean", "e_adp", "mae")


# ---------------------------------------------------------------------------
# Dataclasses
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    """All scores for one image, or the mean over a dataset."""

    s_measure: float = 0.0
    f_max: float = 0.0
    f_mean: float = 0.0
    f_adp: float = 0.0
    e_max: float = 0.0
    e_mean: float = 0.0
    e_adp: float = 0.0
    mae: float = 0.0
    precision: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THRESHOLDS))
    recall: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THRESHOLDS))
    f_curve: np.ndarray = field(default_factory=lambda: np.zeros(NUM_THRESHOLDS))
    count: int = 1

    def scalars(self) -> Dict[str, float]:
        return {name: float(getattr(self, name)) for name in SCALAR_FIELDS}

    def to_dict(self, curves: bool = False) -> dict:
        out: dict = self.scalars()
        out["count"] = self.count
        if curves:
            out["precision"] = [float(v) for v in self.precision]
            out["recall"] = [float(v) for v in self.recall]
            out["f_curve"] = [float(v) for v in self.f_curve]
        return out


# ---------------------------------------------------------------------------
# Input handling
# ---------------------------------------------------------------------------

def _prepare(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    pred, gt = np.squeeze(pred), np.squeeze(gt)
    if pred.ndim != 2:
        raise ShapeError(f"metrics expect single-channel 2-D maps, got shape {pred.shape}")
    if not np.all(np.isfinite(pred)):
        raise DataError("prediction contains NaN or Inf")
    return np.clip(pred, 0.0, 1.0), (gt >= 0.5).astype(np.float64)


def adaptive_threshold(pred: np.ndarray) -> float:
    return min(2.0 * float(np.mean(pred)), 1.0)


# ---------------------------------------------------------------------------
# MAE
# ---------------------------------------------------------------------------

def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    pred, gt = _prepare(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# ---------------------------------------------------------------------------
# F-measure
# ---------------------------------------------------------------------------

def _precision_recall(binary: np.ndarray, gt: np.ndarray) -> Tuple[float, float]:
    tp = float(np.sum(binary * gt))
    fp = float(np.sum(binary * (1.0 - gt)))
    fn = float(np.sum((1.0 - binary) * gt))
    return tp / (tp + fp + METRIC_EPS), tp / (tp + fn + METRIC_EPS)


def f_beta(precision: float, recall: float, beta_sq: float = BETA_SQUARED) -> float:
    denom = beta_sq * precision + recall
    if denom == 0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom


def f_measure_family(pred: np.ndarray, gt: np.ndarray):
    """Return ``(f_max, f_mean, f_adp, (precision, recall), f_curve)``."""
    pred, gt = _prepare(pred, gt)
    precision = np.zeros(NUM_THRESHOLDS)
    recall = np.zeros(NUM_THRESHOLDS)
    curve = np.zeros(NUM_THRESHOLDS)
    for i, t in enumerate(THRESHOLDS):
        p, r = _precision_recall((pred >= t).astype(np.float64), gt)
        precision[i], recall[i], curve[i] = p, r, f_beta(p, r)
    p, r = _precision_recall((pred >= adaptive_threshold(pred)).astype(np.float64), gt)
    return float(curve.max()), float(curve.mean()), f_beta(p, r), (precision, recall), curve


# ---------------------------------------------------------------------------
# E-measure
# ---------------------------------------------------------------------------

def enhanced_alignment(binary: np.ndarray, gt: np.ndarray) -> float:
    """E-measure of one binary map; all-black / all-white ground truth handled separately."""
    g_mean = float(np.mean(gt))
    if g_mean == 0.0:
        return 1.0 - float(np.mean(binary))
    if g_mean == 1.0:
        return float(np.mean(binary))
    phi_b = binary - np.mean(binary)
    phi_g = gt - g_mean
    align = 2.0 * phi_g * phi_b / (phi_g * phi_g + phi_b * phi_b + METRIC_EPS)
    return float(np.mean((align + 1.0) ** 2 / 4.0))


def e_measure_family(pred: np.ndarray, gt: np.ndarray) -> Tuple[float, float, float]:
    """Return ``(e_max, e_mean, e_adp)``."""
    pred, gt = _prepare(pred, gt)
    curve = np.array([enhanced_alignment((pred >= t).astype(np.float64), gt) for t in THRESHOLDS])
    e_adp = enhanced_alignment((pred >= adaptive_threshold(pred)).astype(np.float64), gt)
    return float(curve.max()), float(curve.mean()), e_adp


# ---------------------------------------------------------------------------
# S-measure
# ---------------------------------------------------------------------------

def _object_score(values: np.ndarray) -> float:
    if values.size == 0:
        return 0.0
    x = float(np.mean(values))
    sigma = float(np.std(values))
    return 2.0 * x / (x * x + 1.0 + 2.0 * sigma + METRIC_EPS)


def s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    mu = float(np.mean(gt))
    fg = _object_score(pred[gt == 1])
    bg = _object_score(1.0 - pred[gt == 0])
    return mu * fg + (1.0 - mu) * bg


def centroid(gt: np.ndarray) -> Tuple[int, int]:
    """Column / row split indices ``(X, Y)`` at the rounded foreground centroid."""
    rows, cols = gt.shape
    total = float(gt.sum())
    if total == 0:
        return int(round(cols / 2)), int(round(rows / 2))
    x = np.round(np.sum(gt.sum(axis=0) * np.arange(cols)) / total)
    y = np.round(np.sum(gt.sum(axis=1) * np.arange(rows)) / total)
    return int(x), int(y)


def _ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    n = pred.size
    x = float(np.mean(pred))
    y = float(np.mean(gt))
    sigma_x2 = float(np.sum((pred - x) ** 2)) / (n - 1 + METRIC_EPS)
    sigma_y2 = float(np.sum((gt - y) ** 2)) / (n - 1 + METRIC_EPS)
    sigma_xy = float(np.sum((pred - x) * (gt - y))) / (n - 1 + METRIC_EPS)
    alpha = 4.0 * x * y * sigma_xy
    beta = (x * x + y * y) * (sigma_x2 + sigma_y2)
    if alpha != 0:
        return alpha / (beta + METRIC_EPS)
    if beta == 0:
        return 1.0
    return 0.0


def s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    rows, cols = gt.shape
    x, y = centroid(gt)
    area = float(rows * cols)
    score = 0.0
    for rs, cs in ((slice(0, y), slice(0, x)), (slice(0, y), slice(x, cols)),
                   (slice(y, rows), slice(0, x)), (slice(y, rows), slice(x, cols))):
        block_gt = gt[rs, cs]
        if block_gt.size == 0:
            continue
        score += block_gt.size / area * _ssim(pred[rs, cs], block_gt)
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = S_ALPHA) -> float:
    pred, gt = _prepare(pred, gt)
    mu = float(np.mean(gt))
    if mu == 0.0:
        return 1.0 - float(np.mean(pred))
    if mu == 1.0:
        return float(np.mean(pred))
    score = alpha * s_object(pred, gt) + (1.0 - alpha) * s_region(pred, gt)
    return max(score, 0.0)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def evaluate(pred: np.ndarray, gt: np.ndarray) -> MetricReport:
    f_max, f_mean, f_adp, (precision, recall), curve = f_measure_family(pred, gt)
    e_max, e_mean, e_adp = e_measure_family(pred, gt)
    return MetricReport(
        s_measure=s_measure(pred, gt),
        f_max=f_max, f_mean=f_mean, f_adp=f_adp,
        e_max=e_max, e_mean=e_mean, e_adp=e_adp,
        mae=mae(pred, gt),
        precision=precision, recall=recall, f_curve=curve,
    )


def aggregate(reports: Sequence[MetricReport]) -> MetricReport:
    """Arithmetic mean of every scalar and pointwise mean of every curve."""
    reports = list(reports)
    if not reports:
        raise DataError("cannot aggregate an empty set of metric reports")
    merged = MetricReport(
        **{name: float(np.mean([getattr(r, name) for r in reports])) for name in SCALAR_FIELDS},
        precision=np.mean([r.precision for r in reports], axis=0),
        recall=np.mean([r.recall for r in reports], axis=0),
        f_curve=np.mean([r.f_curve for r in reports], axis=0),
    )
    merged.count = len(reports)
    return merged


def compare_reports(report: MetricReport, reference: MetricReport) -> Dict[str, float]:
    """Per-metric difference ``report - reference``."""
    return {name: getattr(report, name) - getattr(reference, name) for name in SCALAR_FIELDS}


def pr_rows(report: MetricReport) -> List[Tuple[int, float, float, float]]:
    """(threshold index, precision, recall, F) rows for curve CSVs."""
    return [
        (t, float(report.precision[t]), float(report.recall[t]), float(report.f_curve[t]))
        for t in range(NUM_THRESHOLDS)
    ]
