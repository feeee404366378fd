#!/usr/bin/env python3
"""
Run Metrics

Per-epoch records, the metrics CSV (one row per epoch) and console progress.

CSV columns: epoch, wall_clock_seconds, train_loss, test_accuracy,
total_coupling_residual, rho. wall_clock_seconds is cumulative training time
only; setup, data loading and evaluation are excluded. rho is empty for
methods without a penalty schedule.
"""

import csv
import math
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from modules.errors import NumericError


@dataclass
class MetricsRecord:
    epoch: int
    wall_clock_seconds: float
    train_loss: float
    test_accuracy: float
    total_coupling_residual: float
    rho: float | None = None


CSV_COLUMNS = tuple(f.name for f in fields(MetricsRecord))


class TrainingClock:
    """Accumulates time spent inside `with clock:` sections only."""

    def __init__(self):
        self.elapsed = 0.0
        self._start = None

    def __enter__(self):
        self._start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed += time.perf_counter() - self._start
        self._start = None
        return False


def check_record(method: str, record: MetricsRecord):
    """Raise NumericError when loss or residual went non-finite."""
    if not (math.isfinite(record.train_loss) and math.isfinite(record.total_coupling_residual)):
        raise NumericError(
            f"{method}: non-finite values at epoch {record.epoch} "
            f"(loss={record.train_loss}, residual={record.total_coupling_residual})"
        )


def print_epoch(method: str, record: MetricsRecord):
    rho = f"  ρ={record.rho:.4g}" if record.rho is not None else ""
    print(
        f"  📈 [{method}] epoch {record.epoch:>4}  "
        f"loss={record.train_loss:.6f}  acc={record.test_accuracy:.4f}  "
        f"residual={record.total_coupling_residual:.3e}  "
        f"time={record.wall_clock_seconds:.2f}s{rho}"
    )


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_metrics_csv(path: Path, records: list[MetricsRecord]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for record in records:
            writer.writerow([_format(v) for v in astuple(record)])


def read_metrics_csv(path: Path) -> list[MetricsRecord]:
    records = []
    with open(path, "r", newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            records.append(
                MetricsRecord(
                    epoch=int(row["epoch"]),
                    wall_clock_seconds=float(row["wall_clock_seconds"]),
                    train_loss=float(row["train_loss"]),
                    test_accuracy=float(row["test_accuracy"]),
                    total_coupling_residual=float(row["total_coupling_residual"]),
                    rho=float(row["rho"]) if row["rho"] else None,
                )
            )
    return records


def write_summary_csv(path: Path, runs: dict[str, list[list[MetricsRecord]]]):
    """Mean/std over repeated runs, one row per (method, epoch)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(
            [
                "method",
                "epoch",
                "mean_test_accuracy",
                "std_test_accuracy",
                "mean_wall_clock_seconds",
            ]
        )
        for method, repeats in runs.items():
            epochs = min(len(r) for r in repeats)
            for e in range(epochs):
                acc = np.array([r[e].test_accuracy for r in repeats])
                wall = np.array([r[e].wall_clock_seconds for r in repeats])
                writer.writerow(
                    [
                        method,
                        repeats[0][e].epoch,
                        repr(float(acc.mean())),
                        repr(float(acc.std())),
                        repr(float(wall.mean())),
                    ]
                )
