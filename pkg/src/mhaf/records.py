"""Newline-delimited JSON record streams.

Commands that report tables or measurements can emit one JSON object per
line instead of formatted text, which makes their output trivially
machine-readable while staying diffable and streamable.
"""

from __future__ import annotations

import json

import numpy as np

__all__ = ["to_jsonable", "format_records", "parse_records"]


def to_jsonable(value):
    """Coerce numpy scalars/arrays and tuples into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def format_records(records) -> str:
    """Render an iterable of flat dicts as one JSON object per line."""
    lines = []
    for rec in records:
        if not isinstance(rec, dict):
            raise TypeError(f"records must be dicts, got {type(rec).__name__}")
        lines.append(json.dumps(to_jsonable(rec), separators=(", ", ": ")))
    return "\n".join(lines) + ("\n" if lines else "")


def parse_records(text: str) -> list[dict]:
    """Inverse of :func:`format_records`; blank lines are skipped."""
    out = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno} is not valid JSON: {exc}") from exc
        if not isinstance(rec, dict):
            raise ValueError(f"line {lineno} is not a JSON object")
        out.append(rec)
    return out
