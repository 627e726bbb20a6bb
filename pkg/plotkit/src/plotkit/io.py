"""Readers for the result-directory formats written by the kerrsync CLI.

Only the documented files are touched: ``summary.json``, ``sweep.csv`` and
the per-point ``photon_*.csv`` / ``wigner_*.csv`` / ``pphi_*.csv`` /
``hinton_*.csv`` / ``xcorr_*.csv`` exports. Everything is read-only.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np


class ResultsError(Exception):
    """A result directory is missing files or does not parse."""


def load_summary(results_dir, expect_kind: str | None = None) -> dict:
    path = Path(results_dir) / "summary.json"
    if not path.is_file():
        raise ResultsError(f"no summary.json under {results_dir}")
    try:
        summary = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ResultsError(f"{path} is not valid JSON: {exc}") from exc
    kind = summary.get("kind")
    if expect_kind is not None and kind != expect_kind:
        raise ResultsError(
            f"{path} describes a {kind!r} run, expected {expect_kind!r}")
    return summary


def read_table(path) -> dict[str, np.ndarray]:
    """Read a CSV with a header row into float columns (empty cells -> nan)."""
    path = Path(path)
    if not path.is_file():
        raise ResultsError(f"missing input file {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ResultsError(f"{path} is empty") from None
        cols: list[list[float]] = [[] for _ in header]
        for row in reader:
            if len(row) != len(header):
                raise ResultsError(
                    f"{path}: row has {len(row)} cells, header has {len(header)}")
            for c, cell in zip(cols, row):
                c.append(float(cell) if cell != "" else np.nan)
    return {name: np.asarray(c, dtype=np.float64)
            for name, c in zip(header, cols)}


def table_rows(table: dict[str, np.ndarray]) -> int:
    return len(next(iter(table.values()))) if table else 0


def flagged_tables(results_dir, prefix: str,
                   flagged_rows: dict) -> dict[str, dict[str, np.ndarray]]:
    """Load ``<prefix>_<row>.csv`` for each flagged label, keyed by label."""
    out = {}
    for label, irow in flagged_rows.items():
        out[label] = read_table(Path(results_dir) / f"{prefix}_{int(irow)}.csv")
    return out
