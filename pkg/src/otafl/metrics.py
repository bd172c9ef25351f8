"""Per-round metrics and their CSV/JSON persistence."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("t", "num_scheduled", "test_accuracy", "test_loss", "epsilon", "battery_full_count", "phase")


@dataclass
class MetricsRow:
    t: int
    num_scheduled: int
    test_accuracy: float
    test_loss: float
    epsilon: float
    battery_full_count: int
    phase: str


@dataclass
class MetricsRecord:
    """Evaluated rows plus run-level bookkeeping.

    ``energy_*`` counters support the conservation audit; ``skipped_rounds``
    lists rounds where nobody was scheduled.
    """

    rows: list = field(default_factory=list)
    skipped_rounds: list = field(default_factory=list)
    energy_initial: int = 0
    energy_harvested: int = 0
    energy_consumed: int = 0
    final_model: np.ndarray | None = None
    clustering: object = None
    scheduled_sizes: list = field(default_factory=list)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def export_metrics(record: MetricsRecord, path, format: str = "csv") -> None:
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(COLUMNS)
            for r in record.rows:
                writer.writerow([_fmt(getattr(r, c)) for c in COLUMNS])
    elif format == "json":
        rows = []
        for r in record.rows:
            obj = {c: getattr(r, c) for c in COLUMNS}
            if isinstance(obj["epsilon"], float) and math.isnan(obj["epsilon"]):
                obj["epsilon"] = None
            rows.append(obj)
        path.write_text(json.dumps(rows, indent=1) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def _row(obj):
    eps = obj["epsilon"]
    eps = math.nan if eps in (None, "") else float(eps)
    return MetricsRow(
        int(obj["t"]),
        int(obj["num_scheduled"]),
        float(obj["test_accuracy"]),
        float(obj["test_loss"]),
        eps,
        int(obj["battery_full_count"]),
        str(obj["phase"]),
    )


def read_metrics(path, format: str | None = None) -> MetricsRecord:
    path = Path(path)
    format = format or path.suffix.lstrip(".")
    if format == "csv":
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if tuple(reader.fieldnames or ()) != COLUMNS:
                raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
            rows = [_row(r) for r in reader]
    elif format == "json":
        rows = [_row(r) for r in json.loads(path.read_text())]
    else:
        raise ValueError(f"unknown format {format!r}")
    return MetricsRecord(rows=rows)


def emit_plot_data(records, labels, path) -> None:
    """Write ``t`` against each run's test accuracy as aligned columns.

    Runs evaluated on different grids are put on the union grid; a run's value
    is carried forward from its latest evaluation and left blank before its first.
    """
    if len(records) != len(labels):
        raise ValueError("one label per record is required")
    grid = sorted({r.t for rec in records for r in rec.rows})
    columns = []
    for rec in records:
        ts = [r.t for r in rec.rows]
        acc = [r.test_accuracy for r in rec.rows]
        col = []
        for t in grid:
            j = np.searchsorted(ts, t, side="right") - 1
            col.append(acc[j] if j >= 0 else math.nan)
        columns.append(col)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["t", *labels])
        for i, t in enumerate(grid):
            writer.writerow([t, *(_fmt(c[i]) for c in columns)])
