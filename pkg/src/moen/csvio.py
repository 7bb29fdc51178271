"""Comma-separated output with round-trippable floats.

Every float is written with 17 significant digits, which is enough for an
exact round trip of IEEE doubles. Missing values are written as empty fields
and read back as NaN.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from moen.errors import ConfigError


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
            writer.writerow([fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    """Header and raw string fields, checking that every row is complete."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ConfigError(f"{path}:{lineno}: expected {len(header)} fields")
            rows.append(row)
    return header, rows


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and a float array of shape (rows, columns)."""
    header, rows = read_rows(path)
    try:
        values = [[float(v) if v else np.nan for v in row] for row in rows]
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return header, np.array(values, dtype=float).reshape(len(rows), len(header))


def trajectory_rows(times, *blocks):
    """Rows ``t, block1..., block2...`` for node-aligned 2-D arrays."""
    cols = [np.asarray(times, float).reshape(-1, 1)]
    cols += [np.asarray(b, float).reshape(len(times), -1) for b in blocks]
    return np.hstack(cols).tolist()
