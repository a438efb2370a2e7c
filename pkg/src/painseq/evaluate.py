"""Video-level aggregation and metric reporting.

Renders per-class and macro precision/recall/F1 plus accuracy in the same
column layout for text tables, CSV and JSON.
"""

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .data import LABEL_NAMES, NUM_CLASSES
from .errors import DataError, ShapeError

logger = logging.getLogger(__name__)


def majority_vote(frame_probs):
    """Modal class of the per-frame argmax predictions.

    Count ties are broken by the larger probability mass summed over all
    frames for the tied classes; an exact tie falls back to the lower
    class index. Tie-breaks are logged so their frequency is visible.
    """
    probs = np.asarray(frame_probs)
    if probs.ndim != 2 or probs.shape[1] != NUM_CLASSES or probs.shape[0] < 1:
        raise DataError(f"expected a non-empty (frames, {NUM_CLASSES}) array, got {probs.shape}")
    votes = probs.argmax(axis=1)
    counts = np.bincount(votes, minlength=NUM_CLASSES)
    top = counts.max()
    tied = np.flatnonzero(counts == top)
    if tied.size == 1:
        return int(tied[0])
    mass = probs[:, tied].sum(axis=0)
    winner = int(tied[mass == mass.max()].min())
    logger.info("majority vote tie between classes %s resolved to %d",
                tied.tolist(), winner)
    return winner


@dataclass
class ConfusionMatrix:
    """3x3 counts; rows are true classes, columns predicted."""

    counts: np.ndarray

    @property
    def total(self):
        return int(self.counts.sum())

    def __eq__(self, other):
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def confusion(pred_labels, true_labels):
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ShapeError(f"label arrays disagree: {pred.shape} vs {true.shape}")
    for arr, which in ((pred, "predicted"), (true, "true")):
        if arr.size and (arr.min() < 0 or arr.max() >= NUM_CLASSES):
            raise DataError(f"invalid {which} label outside 0..{NUM_CLASSES - 1}")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (true, pred), 1)
    return ConfusionMatrix(counts)


@dataclass
class EvalReport:
    model: str
    split: str
    accuracy: float
    precision: np.ndarray = None  # per class; None for accuracy-only rows
    recall: np.ndarray = None
    f1: np.ndarray = None
    degenerate: list = field(default_factory=list)

    @property
    def macro_precision(self):
        return float(np.mean(self.precision)) if self.precision is not None else None

    @property
    def macro_recall(self):
        return float(np.mean(self.recall)) if self.recall is not None else None

    @property
    def macro_f1(self):
        return float(np.mean(self.f1)) if self.f1 is not None else None


def metrics(cm, model="", split=""):
    """Per-class precision/recall/F1 and accuracy from a confusion matrix.

    Zero-denominator cells yield 0 and are flagged as degenerate so macro
    averages stay defined for arbitrarily bad models.
    """
    counts = cm.counts
    if cm.total < 1:
        raise DataError("empty confusion matrix")
    tp = np.diag(counts).astype(np.float64)
    col = counts.sum(axis=0).astype(np.float64)
    row = counts.sum(axis=1).astype(np.float64)
    degenerate = []
    precision = np.zeros(NUM_CLASSES)
    recall = np.zeros(NUM_CLASSES)
    f1 = np.zeros(NUM_CLASSES)
    for c in range(NUM_CLASSES):
        if col[c] > 0:
            precision[c] = tp[c] / col[c]
        else:
            degenerate.append(f"{LABEL_NAMES[c]}.precision")
        if row[c] > 0:
            recall[c] = tp[c] / row[c]
        else:
            degenerate.append(f"{LABEL_NAMES[c]}.recall")
        if precision[c] + recall[c] > 0:
            f1[c] = 2 * precision[c] * recall[c] / (precision[c] + recall[c])
        else:
            degenerate.append(f"{LABEL_NAMES[c]}.f1")
    accuracy = float(tp.sum() / cm.total)
    return EvalReport(model=model, split=split, accuracy=accuracy,
                      precision=precision, recall=recall, f1=f1,
                      degenerate=degenerate)


_CLASS_HEADS = ("No-Pain", "Low", "High", "Avg.")
_GROUPS = ("Precision", "Recall", "F1-score")
_MODEL_W = 24
_CELL_W = 7
_ACC_W = 8


def _fmt(value):
    return "" if value is None else f"{value:.2f}"


def _group_values(report, group):
    per_class = {"Precision": report.precision, "Recall": report.recall,
                 "F1-score": report.f1}[group]
    if per_class is None:
        return [None] * 4
    return list(per_class) + [float(np.mean(per_class))]


def render_text(reports):
    """Fixed-width table with per-class + Avg. sub-columns per metric."""
    group_w = 4 * (_CELL_W + 1) - 1
    line1 = "Models".ljust(_MODEL_W)
    line2 = " " * _MODEL_W
    for group in _GROUPS:
        line1 += "| " + group.ljust(group_w) + " "
        line2 += "| " + " ".join(h.ljust(_CELL_W) for h in _CLASS_HEADS) + " "
    line1 += "| " + "Accuracy".ljust(_ACC_W)
    line2 += "| " + " " * _ACC_W
    sep = "-" * len(line1)
    lines = [line1.rstrip(), line2.rstrip(), sep]
    for report in reports:
        row = report.model.ljust(_MODEL_W)
        for group in _GROUPS:
            cells = [_fmt(v).ljust(_CELL_W) for v in _group_values(report, group)]
            row += "| " + " ".join(cells) + " "
        row += "| " + _fmt(report.accuracy).ljust(_ACC_W)
        lines.append(row.rstrip())
    return "\n".join(lines) + "\n"


_CSV_FIELDS = ["model", "split", "class", "precision", "recall", "f1", "accuracy"]


def _rows(report):
    per_class = []
    if report.precision is not None:
        for c in range(NUM_CLASSES):
            per_class.append({
                "model": report.model, "split": report.split,
                "class": LABEL_NAMES[c],
                "precision": float(report.precision[c]),
                "recall": float(report.recall[c]),
                "f1": float(report.f1[c]),
                "accuracy": float(report.accuracy),
            })
    per_class.append({
        "model": report.model, "split": report.split, "class": "Avg",
        "precision": report.macro_precision,
        "recall": report.macro_recall,
        "f1": report.macro_f1,
        "accuracy": float(report.accuracy),
    })
    return per_class


def render_csv(reports):
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for report in reports:
        for row in _rows(report):
            writer.writerow({k: (repr(v) if isinstance(v, float) else v if v is not None else "")
                             for k, v in row.items()})
    return buf.getvalue()


def render_json(reports):
    rows = []
    for report in reports:
        rows.extend(_rows(report))
    return json.dumps(rows, indent=2, default=float) + "\n"


def render_report(reports, fmt="text"):
    if fmt == "text":
        return render_text(reports)
    if fmt == "csv":
        return render_csv(reports)
    if fmt == "json":
        return render_json(reports)
    raise DataError(f"unknown report format {fmt!r}")


def parse_csv_report(text):
    """Inverse of render_csv, for round-trip checks."""
    reader = csv.DictReader(io.StringIO(text))
    return _rows_to_reports(list(reader))


def parse_json_report(text):
    return _rows_to_reports(json.loads(text))


def _rows_to_reports(rows):
    by_key = {}
    for row in rows:
        key = (row["model"], row["split"])
        by_key.setdefault(key, []).append(row)
    reports = []
    for (model, split), group in by_key.items():
        classes = {r["class"]: r for r in group}
        avg = classes["Avg"]
        if len(classes) == 1:
            reports.append(EvalReport(model=model, split=split,
                                      accuracy=float(avg["accuracy"])))
            continue
        precision = np.array([float(classes[n]["precision"]) for n in LABEL_NAMES])
        recall = np.array([float(classes[n]["recall"]) for n in LABEL_NAMES])
        f1 = np.array([float(classes[n]["f1"]) for n in LABEL_NAMES])
        reports.append(EvalReport(model=model, split=split,
                                  accuracy=float(avg["accuracy"]),
                                  precision=precision, recall=recall, f1=f1))
    return reports
