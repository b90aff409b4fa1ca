"""Drawing-record ingestion and export (NDJSON, one record per line).

Record shape: {"id": str, "class": str, "strokes": [[[x, y], ...], ...]}.
Malformed lines are reported with their line number and skipped; strict
mode aborts on the first bad line instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

Array = np.ndarray


@dataclass
class DrawingRecord:
    id: str
    class_label: str
    strokes: list[Array]
    image: Array | None = None
    problems: list[str] = field(default_factory=list)

    def validate(self, canvas_size: int | None = None) -> "DrawingRecord":
        if not self.strokes:
            raise DataError(f"record {self.id!r} has no strokes")
        for i, s in enumerate(self.strokes):
            if s.ndim != 2 or s.shape[1] != 2 or len(s) < 1:
                raise DataError(f"record {self.id!r} stroke {i} is not a point list")
            if not np.all(np.isfinite(s)):
                raise DataError(f"record {self.id!r} stroke {i} has non-finite coordinates")
            if canvas_size is not None and (s.min() < -canvas_size or s.max() > 2 * canvas_size):
                raise DataError(f"record {self.id!r} stroke {i} falls far outside the canvas")
        return self


def _parse_line(line: str, lineno: int, canvas_size: int | None) -> DrawingRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"line {lineno}: invalid JSON ({e})") from e
    if not isinstance(obj, dict) or "strokes" not in obj:
        raise DataError(f"line {lineno}: record must be an object with a 'strokes' field")
    strokes = []
    for s in obj["strokes"]:
        strokes.append(np.asarray(s, dtype=np.float64).reshape(-1, 2) if s else np.zeros((0, 2)))
    if any(len(s) == 0 for s in strokes) or not strokes:
        raise DataError(f"line {lineno}: empty stroke list")
    rec = DrawingRecord(
        id=str(obj.get("id", f"line{lineno}")),
        class_label=str(obj.get("class", "")),
        strokes=strokes,
    )
    try:
        return rec.validate(canvas_size)
    except DataError as e:
        raise DataError(f"line {lineno}: {e}") from e


def ingest_drawings(
    path: str, canvas_size: int | None = None, strict: bool = False, report=None
) -> list[DrawingRecord]:
    """Read NDJSON records; skip (or abort on) malformed lines."""
    report = report or (lambda msg: None)
    records: list[DrawingRecord] = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(_parse_line(line, lineno, canvas_size))
            except DataError as e:
                if strict:
                    raise
                report(f"skipped {e}")
    if not records:
        raise DataError(f"{path}: no valid records")
    return records


def export_drawings(records: list[DrawingRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "id": rec.id,
                "class": rec.class_label,
                "strokes": [[[float(x), float(y)] for x, y in s] for s in rec.strokes],
            }
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")
