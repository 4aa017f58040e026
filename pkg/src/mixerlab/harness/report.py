"""Serialization helpers: stable JSON, fixed-column CSV, checksums."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


def clean(obj):
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, np.generic):
        return clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def to_json(report: dict) -> str:
    return json.dumps(clean(report), indent=2, sort_keys=True) + "\n"


def to_csv(columns: tuple[str, ...], rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    writer.writeheader()
    for row in rows:
        writer.writerow(clean(row))
    return buf.getvalue()


def checksum(a: np.ndarray) -> str:
    """Short digest of the exact float64 bytes."""
    data = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    return hashlib.sha256(data.tobytes()).hexdigest()[:16]


def emit(text: str, out: str | None) -> None:
    """Machine output goes to ``out`` or stdout."""
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def say(line: str = "") -> None:
    """Human summary goes to stderr."""
    print(line, file=sys.stderr)
