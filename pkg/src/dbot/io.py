"""Reading CSV matrices and histogram files, writing JSON and CSV results."""

from __future__ import annotations

import csv
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .clustering import HistogramDataset, squared_euclidean


class InputFormatError(ValueError):
    """A data file could not be parsed; the message names the location."""


def _parse_cell(text, path, line, col):
    s = text.strip()
    try:
        return float(s)
    except ValueError:
        raise InputFormatError(f"{path}: line {line}, column {col}: cannot parse {s!r} as a number") from None


def read_matrix(path) -> np.ndarray:
    """Comma-separated numeric rows; blank lines and ``#`` comments are skipped.

    ``inf`` and ``-inf`` are accepted (infinite upper bounds).  Ragged rows
    and unparsable cells raise :class:`InputFormatError` with the 1-based
    line and column.
    """
    rows, width = [], None
    with open(path, newline="") as fh:
        for line_no, fields in enumerate(csv.reader(fh), start=1):
            if not fields or not "".join(fields).strip() or fields[0].lstrip().startswith("#"):
                continue
            row = [_parse_cell(f, path, line_no, c) for c, f in enumerate(fields, start=1)]
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise InputFormatError(
                    f"{path}: line {line_no}: expected {width} columns, found {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    return np.array(rows, dtype=float)


def read_vector(path) -> np.ndarray:
    """A single row or a single column of numbers."""
    M = read_matrix(path)
    if M.shape[0] != 1 and M.shape[1] != 1:
        raise InputFormatError(f"{path}: expected a single row or column, got shape {M.shape}")
    return M.reshape(-1)


def read_labels(path) -> np.ndarray:
    v = read_vector(path)
    if np.any(v != np.round(v)) or not np.all(np.isfinite(v)):
        raise InputFormatError(f"{path}: labels must be integers")
    return v.astype(int)


def read_histograms(path) -> HistogramDataset:
    """JSON with ``histograms`` and either ``support_cost`` or ``support`` points.

    Given ``support`` the ground cost is the squared Euclidean distance
    between support points.
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict) or "histograms" not in doc:
        raise InputFormatError(f"{path}: expected an object with a 'histograms' key")
    hists = np.asarray(doc["histograms"], dtype=float)
    if "support_cost" in doc:
        cost = np.asarray(doc["support_cost"], dtype=float)
    elif "support" in doc:
        pts = np.asarray(doc["support"], dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        cost = squared_euclidean(pts, pts)
    else:
        raise InputFormatError(f"{path}: need 'support_cost' or 'support'")
    return HistogramDataset(cost, hists)


def _plain(obj):
    """Convert numpy containers and non-finite floats into JSON-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def dumps(obj, timestamp=True) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip floats.

    A ``timestamp`` field (UTC, ISO 8601) is added unless suppressed.
    """
    doc = _plain(obj)
    if timestamp and isinstance(doc, dict):
        doc["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def write_text(path, text):
    """Write to ``path``, or to standard output when ``path`` is None or ``-``."""
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _cell(x) -> str:
    # repr gives the shortest string that reads back to the same double
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return str(x)


def matrix_to_csv(M) -> str:
    M = np.atleast_2d(np.asarray(M))
    return "".join(",".join(_cell(x) for x in row) + "\n" for row in M)


def rows_to_csv(header, rows) -> str:
    lines = [",".join(header)] + [",".join(_cell(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
