"""
Machine-readable metric records.

Per-image results are stored as JSON lines so a file can be appended to
safely and read back without parsing it as a whole.
"""
from __future__ import annotations

import json
import logging
import os
from typing import Any, Dict, Iterable, List, Optional

logger = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"


def append_records(path: str, records: Iterable[Dict[str, Any]]) -> str:
    """Append each record as one JSON line.  Returns the file path."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    return path


def load_records(path: str, limit: Optional[int] = None) -> List[Dict[str, Any]]:
    """Return stored records in file order (the last *limit* when given)."""
    if not os.path.isfile(path):
        return []
    entries: List[Dict[str, Any]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                entries.append(json.loads(line))
            except json.JSONDecodeError:
                logger.warning("Skipping corrupt record at %s:%d", path, lineno)
    return entries[-limit:] if limit else entries


def image_record(image_id: str, scalars: Dict[str, float], **extra: Any) -> Dict[str, Any]:
    record: Dict[str, Any] = {"id": image_id}
    record.update({k: round(float(v), 10) for k, v in scalars.items()})
    record.update(extra)
    return record
