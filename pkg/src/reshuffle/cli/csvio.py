"""Fixed-schema trajectory CSVs.

Floats are written with ``repr`` so they round-trip exactly; a missing
metric is an empty field.
"""
from __future__ import annotations

import csv
import io
from typing import Iterable, Optional

TRAJECTORY_COLUMNS = ("method", "seed", "epoch", "inner_step", "global_step", "gamma", "f_value", "dist_sq", "grad_norm_sq")
_INT = {"seed", "epoch", "inner_step", "global_step"}
_STR = {"method", "theorem_id", "provenance", "note"}


class SchemaError(ValueError):
    pass


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    try:
        import numpy as np

        if isinstance(v, np.integer):
            return str(int(v))
        if isinstance(v, np.floating):
            return repr(float(v))
    except ImportError:  # pragma: no cover
        pass
    return str(v)


def parse_value(col: str, s: str):
    if s == "":
        return None
    if col in _STR:
        return s
    if s in ("true", "false"):
        return s == "true"
    if col in _INT:
        return int(s)
    try:
        return float(s)
    except ValueError:
        return s


def serialize_rows(rows: Iterable[dict], columns=TRAJECTORY_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([format_value(r.get(c)) for c in columns])
    return buf.getvalue()


def parse_rows(text: str, columns: Optional[tuple] = TRAJECTORY_COLUMNS) -> list[dict]:
    """Parse CSV text; with ``columns`` given the header must match exactly."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("missing header") from None
    if columns is not None and tuple(header) != tuple(columns):
        raise SchemaError(f"header {header} does not match {list(columns)}")
    out = []
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(rec)}")
        out.append({c: parse_value(c, v) for c, v in zip(header, rec)})
    return out


def write_rows(path, rows, columns=TRAJECTORY_COLUMNS) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(serialize_rows(rows, columns))


def read_rows(path, columns: Optional[tuple] = TRAJECTORY_COLUMNS) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return parse_rows(fh.read(), columns)
