"""Confusion matrices and per-increment experiment reports (CSV / JSON)."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import ContractError, FormatError

CSV_COLUMNS = ("increment", "classes_seen", "top1", "beta", "lambda", "seconds")


def confusion_matrix(predictions, labels, k: int) -> np.ndarray:
    """``out[i, j]`` counts samples of true class ``i`` predicted as ``j``."""
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ContractError("predictions and labels differ in length")
    for name, arr in (("prediction", predictions), ("label", labels)):
        bad = (arr < 0) | (arr >= k)
        if bad.any():
            raise ContractError(f"{name} {int(arr[bad][0])} outside [0, {k})")
    out = np.zeros((k, k), dtype=np.int64)
    np.add.at(out, (labels, predictions), 1)
    return out


def top1_from_confusion(cm) -> float:
    cm = np.asarray(cm)
    return float(np.trace(cm) / cm.sum())


@dataclass
class IncrementResult:
    increment: int
    classes_seen: int
    top1: float
    per_class: list[float]
    confusion: list[list[int]]
    beta: float | None = None
    lam: float | None = None
    validation_top1: float | None = None
    old_top1: float | None = None
    memory: dict = field(default_factory=dict)
    seconds: float = field(default=0.0, compare=False)

    def check(self):
        cm = np.asarray(self.confusion)
        if cm.shape != (self.classes_seen, self.classes_seen):
            raise ContractError(f"increment {self.increment}: confusion shape {cm.shape}")
        if abs(top1_from_confusion(cm) - self.top1) > 1e-12:
            raise ContractError(f"increment {self.increment}: top1 disagrees with confusion trace")


@dataclass
class ExperimentReport:
    method: str
    seed: int
    class_order: list[int]
    increments: list[IncrementResult] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def final(self) -> IncrementResult:
        return self.increments[-1]

    def check(self, test_counts=None):
        """Validate trace/accuracy consistency and, if given, row sums against class counts."""
        for inc in self.increments:
            inc.check()
            if test_counts is not None:
                rows = np.asarray(inc.confusion).sum(axis=1)
                if list(rows) != list(test_counts[: inc.classes_seen]):
                    raise ContractError(f"increment {inc.increment}: confusion row sums {list(rows)}")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        incs = [IncrementResult(**i) for i in d.get("increments", [])]
        return cls(d["method"], d["seed"], list(d["class_order"]), incs, dict(d.get("config", {})))


def _fmt(v):
    return "" if v is None else repr(v) if isinstance(v, float) else str(v)


def emit_report(report: ExperimentReport, fmt: str, path) -> None:
    report.check()
    if fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for inc in report.increments:
                w.writerow([inc.increment, inc.classes_seen, _fmt(inc.top1), _fmt(inc.beta), _fmt(inc.lam),
                            _fmt(inc.seconds)])
    elif fmt == "json":
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    else:
        raise ContractError(f"unknown report format {fmt!r}")


def load_report(path) -> ExperimentReport:
    try:
        with open(path, encoding="utf-8") as fh:
            return ExperimentReport.from_dict(json.load(fh))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: not a JSON experiment report ({exc})") from None


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise FormatError(f"{path}: unexpected columns {reader.fieldnames}")
        return list(reader)


def write_table(rows, columns, path) -> None:
    """Plain CSV table writer used by the sweep runners."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in columns])
