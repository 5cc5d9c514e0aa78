"""CSV and config-file input/output."""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .errors import ValidationError


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def parse_matrix_csv(text: str):
    """Parse numeric CSV text; a first row with any non-numeric field is taken as a header.

    Returns (matrix, header or None).
    """
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(f.strip() for f in r)]
    if not rows:
        raise ValidationError("input CSV is empty")
    header = None
    if not all(_is_number(f.strip()) for f in rows[0]):
        header = [f.strip() for f in rows[0]]
        rows = rows[1:]
        if not rows:
            raise ValidationError("input CSV has a header but no data")
    width = len(header) if header is not None else len(rows[0])
    for k, r in enumerate(rows):
        if len(r) != width:
            raise ValidationError(f"ragged CSV: row {k + 1} has {len(r)} fields, expected {width}")
    try:
        m = np.array([[float(f) for f in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"non-numeric CSV entry: {exc}") from None
    return m, header


def read_matrix_csv(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
    return parse_matrix_csv(text)


def fmt_number(x, digits=None):
    x = float(x)
    if math.isnan(x):
        return "nan"
    if digits is None:
        return "%.17g" % x
    return f"{x:.{digits}f}"


def matrix_to_csv(m, digits=None, header=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header is not None:
        w.writerow(header)
    for row in np.asarray(m):
        w.writerow([fmt_number(v, digits) for v in row])
    return buf.getvalue()


def rows_to_csv(header, rows, digits=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([str(v) if isinstance(v, (int, np.integer, str)) else fmt_number(v, digits) for v in r])
    return buf.getvalue()


def parse_config(text: str) -> dict:
    """JSON object, or flat ``key = value`` lines with ``#`` comments."""
    s = text.strip()
    if s.startswith("{"):
        try:
            d = json.loads(s)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"bad JSON config: {exc}") from None
        if not isinstance(d, dict):
            raise ValidationError("config must be a JSON object")
        return d
    d = {}
    for k, line in enumerate(text.splitlines()):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"config line {k + 1} is not key=value")
        key, val = (t.strip() for t in line.split("=", 1))
        d[key] = val
    return d


def read_config(path) -> dict:
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None
