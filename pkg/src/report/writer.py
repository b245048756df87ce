import json
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

from src.report.template import apply_report_template

logger = logging.getLogger(__name__)


def _default(value: Any):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def write_jsonl(records: Iterable[Mapping[str, Any]], path: str | Path) -> Path:
    """One JSON object per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, default=_default, sort_keys=True) + "\n")
    return path


def read_jsonl(path: str | Path) -> list:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_summary(report_name: str, values: Mapping[str, Any], out_dir: str | Path) -> Path:
    path = Path(out_dir) / "summary.md"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(apply_report_template(report_name, values), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path
