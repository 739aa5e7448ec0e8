"""
Ablation variants and their comparison against the baseline.

Each variant is a set of config overrides applied on top of the experiment
config; every variant trains on the same samples with the same seed(s).
"""
from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

from .config import ExperimentConfig
from .data import Sample
from .errors import ConfigError
from .metrics import MetricReport, aggregate, compare_reports
from .training import Trainer, evaluate_model

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Variant table
# ---------------------------------------------------------------------------

_NONE = {"level1_attention": "none", "level4_attention": "none", "ktm": False}
_FULL = {"level1_attention": "dswsam", "level4_attention": "swsam", "ktm": True,
         "ktm_mode": "full", "attention_variant": "full"}

VARIANTS: Dict[str, Dict[str, Any]] = {
    "baseline": dict(_FULL, **_NONE),
    "+dswsam": dict(_FULL, **dict(_NONE, level1_attention="dswsam")),
    "+ktm": dict(_FULL, **dict(_NONE, ktm=True)),
    "+swsam": dict(_FULL, **dict(_NONE, level4_attention="swsam")),
    "+ktm+swsam": dict(_FULL, level1_attention="none"),
    "+dswsam+swsam": dict(_FULL, ktm=False),
    "+dswsam+ktm": dict(_FULL, level4_attention="none"),
    "full": dict(_FULL),
    "dswsam-at-both-levels": dict(_FULL, level4_attention="dswsam"),
    "swsam-at-both-levels": dict(_FULL, level1_attention="swsam"),
    "w/o dirconv": dict(_FULL, level1_attention="swsam"),
    "w/o swsam": dict(_FULL, level1_attention="dirconv"),
    "w/o shuffle": dict(_FULL, attention_variant="no_shuffle"),
    "w/o weights": dict(_FULL, attention_variant="no_weights"),
    "w/ sa": dict(_FULL, attention_variant="plain_sa"),
    "w/ sge": dict(_FULL, attention_variant="sge"),
    "w/ sum": dict(_FULL, ktm_mode="sum_only"),
    "w/ product": dict(_FULL, ktm_mode="product_only"),
}

GROUPS: Dict[str, List[str]] = {
    "pairwise": ["+ktm+swsam", "+dswsam+swsam", "+dswsam+ktm"],
    "modules": ["baseline", "+dswsam", "+ktm", "+swsam", "+ktm+swsam", "+dswsam+swsam",
                "+dswsam+ktm", "full", "dswsam-at-both-levels", "swsam-at-both-levels"],
    "components": ["full", "w/o dirconv", "w/o swsam", "w/o shuffle", "w/o weights", "w/ sa", "w/ sge"],
    "ktm-modes": ["full", "w/ sum", "w/ product"],
}


def _key(name: str) -> str:
    return re.sub(r"[\s_\-/]+", "", name.strip().lower())


_LOOKUP = {_key(name): name for name in list(VARIANTS) + list(GROUPS)}


def resolve_variants(names: Sequence[str]) -> List[str]:
    """Canonical variant names, groups expanded, duplicates dropped in order."""
    resolved: List[str] = []
    for raw in names:
        for part in (p for p in raw.split(",") if p.strip()):
            canonical = _LOOKUP.get(_key(part))
            if canonical is None:
                raise ConfigError(
                    f"Unknown ablation variant '{part.strip()}' "
                    f"(choose from {', '.join(list(VARIANTS) + list(GROUPS))})"
                )
            for name in GROUPS.get(canonical, [canonical]):
                if name not in resolved:
                    resolved.append(name)
    if not resolved:
        raise ConfigError("No ablation variants given")
    return resolved


def variant_config(cfg: ExperimentConfig, name: str, seed: Optional[int] = None) -> ExperimentConfig:
    changes = dict(VARIANTS[name])
    if seed is not None:
        changes["seed"] = seed
    return cfg.replace(**changes)


# ---------------------------------------------------------------------------
# Running
# ---------------------------------------------------------------------------

@dataclass
class AblationRow:
    variant: str
    report: MetricReport
    final_loss: float
    seconds: float
    seeds: List[int] = field(default_factory=list)
    delta: Optional[Dict[str, float]] = None

    def to_dict(self) -> dict:
        out = {"variant": self.variant, "final_loss": self.final_loss,
               "seconds": round(self.seconds, 3), "seeds": self.seeds}
        out.update(self.report.scalars())
        if self.delta is not None:
            out["delta"] = self.delta
        return out


def run_variant(cfg: ExperimentConfig, name: str, samples: Sequence[Sample],
                seeds: Sequence[int], on_progress=None) -> AblationRow:
    started = time.perf_counter()
    reports, losses = [], []
    for seed in seeds:
        trainer = Trainer(variant_config(cfg, name, seed), samples)
        trainer.on_progress = on_progress
        result = trainer.fit()
        _, report = evaluate_model(trainer.model, samples, cfg.batch_size)
        reports.append(report)
        losses.append(result.losses[-1] if result.losses else float("nan"))
    row = AblationRow(
        variant=name,
        report=aggregate(reports),
        final_loss=float(sum(losses) / len(losses)),
        seconds=time.perf_counter() - started,
        seeds=list(seeds),
    )
    logger.info("Variant %s: f_adp %.4f, mae %.4f", name, row.report.f_adp, row.report.mae)
    return row


def run_ablation(
    cfg: ExperimentConfig,
    names: Sequence[str],
    samples: Sequence[Sample],
    repeats: int = 1,
    on_variant: Optional[Callable[[str, int, int], None]] = None,
    on_progress=None,
) -> List[AblationRow]:
    variants = resolve_variants(names)
    seeds = [cfg.seed + k for k in range(max(repeats, 1))]
    rows = []
    for i, name in enumerate(variants, start=1):
        if on_variant is not None:
            on_variant(name, i, len(variants))
        rows.append(run_variant(cfg, name, samples, seeds, on_progress))
    return with_deltas(rows)


def with_deltas(rows: List[AblationRow]) -> List[AblationRow]:
    """Attach per-metric differences against the baseline row, when present."""
    reference = next((r for r in rows if r.variant == "baseline"), None)
    for row in rows:
        row.delta = None if reference is None or row is reference else compare_reports(row.report, reference.report)
    return rows


def format_delta(value: float, lower_is_better: bool = False) -> str:
    """Signed difference with a colour hint; MAE improves downwards."""
    if abs(value) < 5e-5:
        return "[dim](same)[/dim]"
    sign = "+" if value > 0 else ""
    is_good = (value < 0) if lower_is_better else (value > 0)
    color = "green" if is_good else "red"
    return f"[{color}]{sign}{value:.4f}[/{color}]"
