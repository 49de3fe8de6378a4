"""Export and import of reports: CSV tables, JSON summaries and atomic writes."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from collections import OrderedDict
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

from shortcot_lab.core.errors import DataError


def atomic_write_bytes(path: str | Path, data: bytes) -> Path:
    """Write *data* to a temporary sibling, then rename it over *path*."""
    dest = Path(path)
    dest.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{dest.name}.", suffix=".tmp", dir=dest.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, dest)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return dest


def atomic_write_text(path: str | Path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def format_cell(value: Any) -> str:
    """Render one CSV cell; floats use ``repr`` so they parse back exactly."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def parse_cell(raw: str) -> Any:
    """Inverse of :func:`format_cell`: bool, int, float, then string."""
    if raw == "":
        return None
    if raw in ("true", "false"):
        return raw == "true"
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        return raw


def csv_string(columns: Sequence[str], rows: Iterable[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([format_cell(row.get(col)) for col in columns])
    return buf.getvalue()


def write_csv(
    path: str | Path,
    columns: Sequence[str],
    rows: Iterable[Mapping[str, Any]],
) -> Path:
    """Write *rows* with the documented column order."""
    return atomic_write_text(path, csv_string(columns, rows))


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, Any]]]:
    """Read a CSV written by :func:`write_csv`, converting cells back to values."""
    p = Path(path)
    with p.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            columns = next(reader)
        except StopIteration:
            raise DataError(f"Empty CSV file: {p}") from None
        rows: list[dict[str, Any]] = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(columns):
                raise DataError(
                    f"{p}:{lineno}: expected {len(columns)} cells, got {len(record)}"
                )
            rows.append({c: parse_cell(v) for c, v in zip(columns, record, strict=True)})
    return columns, rows


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _json_default(obj: object) -> Any:
    if hasattr(obj, "tolist"):
        return obj.tolist()
    if isinstance(obj, (set, frozenset, tuple)):
        return list(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def export_json(data: Mapping[str, Any], path: str | Path) -> Path:
    """Export a summary record to a JSON file."""
    return atomic_write_text(path, json.dumps(data, indent=2, default=_json_default) + "\n")


def import_json(path: str | Path) -> OrderedDict[str, Any]:
    """Import a JSON summary, preserving key order."""
    data: OrderedDict[str, Any] = json.loads(Path(path).read_text(), object_pairs_hook=OrderedDict)
    return data
