"""Readers for the collapselab CSV/JSON output schemas.

Parse errors always name the offending file line.  Bin edges come from the
histogram CSV and are never recomputed here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

HIST_COLUMNS = ["experiment", "kernel", "d", "n", "bin_left", "bin_right", "count", "mean_wmax"]


class CsvFormatError(ValueError):
    """A malformed row, reported with its 1-based line number."""

    def __init__(self, path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.path = str(path)
        self.line_number = line_number


@dataclass(frozen=True)
class CellHistogram:
    """Binned max-weight counts for one (d, n) grid cell."""

    experiment: str
    kernel: str
    d: int
    n: int
    bin_left: list[float]
    bin_right: list[float]
    counts: list[int]
    mean_wmax: float

    @property
    def total(self) -> int:
        return sum(self.counts)

    def bin_share(self, index: int) -> float:
        return self.counts[index] / self.total if self.total else 0.0


def read_hist_csv(path) -> dict[tuple[int, int], CellHistogram]:
    """Parse a histogram CSV into per-cell binned counts keyed by (d, n)."""
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise CsvFormatError(path, 1, "empty file")
    header = lines[0].split(",")
    if header != HIST_COLUMNS:
        raise CsvFormatError(path, 1, f"unexpected header {lines[0]!r}")
    rows: dict[tuple[int, int], dict] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(HIST_COLUMNS):
            raise CsvFormatError(path, lineno, f"expected {len(HIST_COLUMNS)} fields, got {len(parts)}")
        rec = dict(zip(HIST_COLUMNS, parts))
        try:
            d, n = int(rec["d"]), int(rec["n"])
            left, right = float(rec["bin_left"]), float(rec["bin_right"])
            count = int(rec["count"])
            mean = float(rec["mean_wmax"])
        except ValueError as exc:
            raise CsvFormatError(path, lineno, f"bad numeric field: {exc}") from exc
        if count < 0 or right <= left:
            raise CsvFormatError(path, lineno, "counts must be >= 0 and bin_right > bin_left")
        cell = rows.setdefault(
            (d, n),
            {
                "experiment": rec["experiment"],
                "kernel": rec["kernel"],
                "bin_left": [],
                "bin_right": [],
                "counts": [],
                "mean": mean,
            },
        )
        cell["bin_left"].append(left)
        cell["bin_right"].append(right)
        cell["counts"].append(count)
    return {
        key: CellHistogram(
            experiment=v["experiment"],
            kernel=v["kernel"],
            d=key[0],
            n=key[1],
            bin_left=v["bin_left"],
            bin_right=v["bin_right"],
            counts=v["counts"],
            mean_wmax=v["mean"],
        )
        for key, v in rows.items()
    }


def read_rates_json(path) -> dict:
    """Load a rate-sweep report ({"cells": [...], "slope": ...})."""
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict) or "cells" not in doc:
        raise ValueError(f"{path}: not a rate-sweep report (missing 'cells')")
    return doc
