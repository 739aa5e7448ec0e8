"""
Output formatting -- JSON export, text reports, and CSV curves/traces.

Nothing here writes timestamps, so identical runs produce identical files.
"""
from __future__ import annotations

import json
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from saliency.metrics import MetricReport, pr_rows
from saliency.records import RECORDS_FILE, append_records, image_record

REPORT_TEXT = "report.txt"
REPORT_JSON = "report.json"
CURVES_CSV = "curves.csv"


def save_json(result: Dict[str, Any], filepath: str) -> None:
    """Write *result* to *filepath* atomically (write-tmp then rename)."""
    dir_path = os.path.dirname(filepath) or "."
    os.makedirs(dir_path, exist_ok=True)
    tmp = os.path.join(dir_path, f".tmp_{os.path.basename(filepath)}")

    try:
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(result, fh, indent=2, ensure_ascii=False, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, filepath)
    except (IOError, OSError) as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IOError(f"Failed to save JSON to {filepath}: {exc}") from exc


# ---------------------------------------------------------------------------
# Text report
# ---------------------------------------------------------------------------

def format_text_report(report: MetricReport, title: str = "Saliency Metrics") -> str:
    """``key: value`` lines, one per scalar metric."""
    sep = "=" * 40
    lines = [sep, title, sep, f"images: {report.count}"]
    lines.extend(f"{key}: {value:.6f}" for key, value in report.scalars().items())
    lines.append(sep)
    return "\n".join(lines) + "\n"


def parse_text_report(text: str) -> Dict[str, float]:
    values: Dict[str, float] = {}
    for line in text.splitlines():
        key, sep, raw = line.partition(":")
        if not sep:
            continue
        try:
            values[key.strip()] = float(raw)
        except ValueError:
            continue
    return values


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def format_curves_csv(report: MetricReport) -> str:
    lines = ["threshold,precision,recall,f_measure"]
    lines.extend(f"{t},{p:.10f},{r:.10f},{f:.10f}" for t, p, r, f in pr_rows(report))
    return "\n".join(lines) + "\n"


def format_loss_trace(losses: Sequence[float], learning_rates: Sequence[float]) -> str:
    lines = ["iteration,lr,loss"]
    lines.extend(f"{i},{lr:.17g},{loss:.17g}" for i, (lr, loss) in enumerate(zip(learning_rates, losses), start=1))
    return "\n".join(lines) + "\n"


def read_loss_trace(path: str) -> List[float]:
    with open(path, encoding="utf-8") as fh:
        next(fh, None)
        return [float(line.rsplit(",", 1)[1]) for line in fh if line.strip()]


def _write(path: str, text: str) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return path


def write_loss_trace(path: str, losses: Sequence[float], learning_rates: Sequence[float]) -> str:
    return _write(path, format_loss_trace(losses, learning_rates))


# ---------------------------------------------------------------------------
# Report bundle
# ---------------------------------------------------------------------------

def write_report_bundle(
    directory: str,
    report: MetricReport,
    per_image: Optional[Sequence[Tuple[str, MetricReport]]] = None,
    title: str = "Saliency Metrics",
) -> Dict[str, str]:
    """Text report, JSON record, 256-row curve CSV and per-image JSON lines."""
    paths = {
        "text": _write(os.path.join(directory, REPORT_TEXT), format_text_report(report, title)),
        "curves": _write(os.path.join(directory, CURVES_CSV), format_curves_csv(report)),
    }
    record = report.to_dict(curves=True)
    if per_image:
        record["images"] = {image_id: r.to_dict() for image_id, r in per_image}
    json_path = os.path.join(directory, REPORT_JSON)
    save_json(record, json_path)
    paths["json"] = json_path
    if per_image:
        records_path = os.path.join(directory, RECORDS_FILE)
        if os.path.exists(records_path):
            os.unlink(records_path)
        paths["records"] = append_records(
            records_path, (image_record(image_id, r.scalars()) for image_id, r in per_image)
        )
    return paths
