"""Accuracy reports and text confusion tables.

The headline number is the unweighted mean of per-class accuracies, which
coincides with overall accuracy when classes are equally sized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fusion import ConfusionMatrix, tally_confusion


@dataclass
class EvaluationReport:
    system_id: str
    class_names: list
    per_class_accuracy: np.ndarray
    average_accuracy: float
    confusion: ConfusionMatrix
    empty_classes: list

    @property
    def n_clips(self) -> int:
        return self.confusion.total


def evaluate(predictions, truths, class_names, system_id: str = "") -> EvaluationReport:
    """Build the report for one system's predictions against ground truth.

    Classes that never occur in the truth labels score 0 and are listed in
    ``empty_classes``.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truths = np.asarray(truths, dtype=np.int64)
    if predictions.shape != truths.shape or predictions.ndim != 1:
        raise ValueError("predictions and truths must be 1-D and the same length")
    if predictions.size == 0:
        raise ValueError("nothing to evaluate")
    confusion = tally_confusion(truths, predictions, len(class_names))
    row_sums = confusion.counts.sum(axis=1)
    diag = np.diag(confusion.counts)
    per_class = np.divide(
        diag,
        row_sums,
        out=np.zeros(len(class_names), dtype=np.float64),
        where=row_sums > 0,
    )
    empty = [name for name, total in zip(class_names, row_sums) if total == 0]
    return EvaluationReport(
        system_id=system_id,
        class_names=list(class_names),
        per_class_accuracy=per_class,
        average_accuracy=float(per_class.mean()),
        confusion=confusion,
        empty_classes=empty,
    )


def render_confusion(report: EvaluationReport) -> str:
    """Row-normalized percentage table, classes in manifest order."""
    names = report.class_names
    label_w = max(len(n) for n in names)
    col_w = max(6, max(len(n) for n in names))
    lines = [
        " " * (label_w + 2)
        + "  ".join(f"{n:>{col_w}}" for n in names)
    ]
    counts = report.confusion.counts
    row_sums = counts.sum(axis=1)
    for name, row, total in zip(names, counts, row_sums):
        if total > 0:
            percents = 100.0 * row / total
        else:
            percents = np.zeros(len(names))
        cells = "  ".join(f"{p:>{col_w}.2f}" for p in percents)
        lines.append(f"{name:<{label_w}}  {cells}")
    return "\n".join(lines) + "\n"


def render_report(report: EvaluationReport) -> str:
    names = report.class_names
    label_w = max(len(n) for n in names)
    counts = report.confusion.counts
    row_sums = counts.sum(axis=1)
    lines = [
        f"system: {report.system_id}",
        f"clips evaluated: {report.n_clips}",
        f"average accuracy: {100.0 * report.average_accuracy:.2f}%"
        "  (unweighted mean over classes)",
        "per-class accuracy:",
    ]
    for name, acc, correct, total in zip(
        names, report.per_class_accuracy, np.diag(counts), row_sums
    ):
        note = "  (no clips)" if total == 0 else f"  ({correct}/{total})"
        lines.append(f"  {name:<{label_w}}  {100.0 * acc:>6.2f}%{note}")
    if report.empty_classes:
        lines.append("classes without test clips: " + ", ".join(report.empty_classes))
    lines.append("confusion matrix (rows: truth, columns: output, row %):")
    body = render_confusion(report)
    lines.extend("  " + line for line in body.splitlines())
    return "\n".join(lines) + "\n"


def save_report(path, report: EvaluationReport) -> None:
    with open(path, "w") as fh:
        fh.write(render_report(report))
