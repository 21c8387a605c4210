"""CSV and JSON plumbing.

Numbers are written with ``repr`` (shortest round-trip form, at most 17
significant digits) and parsed with ``float``, so finite doubles survive a
write/read cycle bit for bit and the decimal point never depends on the
locale.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


class DataError(ValueError):
    """Malformed input file; the message names the offending cell."""


def _parse(cell: str):
    try:
        return float(cell)
    except ValueError:
        return None


def read_csv(path) -> tuple[np.ndarray, list[str] | None]:
    """Read an ``n x p`` numeric matrix.

    The first row is treated as a header when any of its cells is not a
    number. Returns ``(values, header)`` with ``header=None`` if absent.
    Raises :class:`DataError` with a 1-based row/column position for empty
    files, ragged rows, non-numeric cells and NaN/Inf values.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        rows = [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]
    if not rows:
        raise DataError(f"{path}: no data rows")
    header = None
    if any(_parse(c.strip()) is None for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
        offset = 2
    else:
        offset = 1
    if not rows:
        raise DataError(f"{path}: header but no data rows")
    width = len(header) if header is not None else len(rows[0])
    out = np.empty((len(rows), width))
    for i, row in enumerate(rows):
        if len(row) != width:
            raise DataError(f"{path}: row {i + offset} has {len(row)} columns, expected {width}")
        for j, cell in enumerate(row):
            v = _parse(cell.strip())
            if v is None:
                raise DataError(f"{path}: row {i + offset}, column {j + 1}: not a number: {cell!r}")
            if not math.isfinite(v):
                raise DataError(f"{path}: row {i + offset}, column {j + 1}: non-finite value {cell!r}")
            out[i, j] = v
    return out, header


def format_cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return repr(v) if math.isfinite(v) else "NA"
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, rows, header=None):
    """Write rows of numbers/strings; floats use their round-trip repr."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header is not None:
            w.writerow(header)
        for row in np.atleast_2d(rows) if isinstance(rows, np.ndarray) else rows:
            w.writerow([format_cell(v) for v in row])


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj) -> str:
    return json.dumps(to_jsonable(obj), indent=2, allow_nan=False) + "\n"


def write_json(path, obj):
    """Write ``obj`` as JSON; non-finite floats become ``null``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(obj), encoding="utf-8")


def read_json(path) -> dict:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
