"""Classification metrics computed from a confusion matrix.

Rows of the confusion matrix are true classes, columns predictions. All
scores are fractions in [0, 1]; a class with an empty denominator scores 0.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ContractError


@dataclass
class MetricsReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    ova_binary_accuracy: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    ova_accuracy: list[float]
    support: list[int]
    confusion: list[list[int]]
    labels: list[str]

    @property
    def total(self) -> int:
        return int(sum(self.support))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        return cls(**obj)

    def format_table(self) -> str:
        width = max(8, *(len(n) for n in self.labels))
        lines = [
            f"accuracy           {100 * self.accuracy:7.2f}",
            f"macro F1           {100 * self.macro_f1:7.2f}",
            f"weighted F1        {100 * self.weighted_f1:7.2f}",
            f"ova binary acc     {100 * self.ova_binary_accuracy:7.2f}",
            "",
            f"{'class':<{width}}  precision  recall     f1  ova-acc  support",
        ]
        for i, name in enumerate(self.labels):
            lines.append(
                f"{name:<{width}}  {100 * self.precision[i]:9.2f}  {100 * self.recall[i]:6.2f}  "
                f"{100 * self.f1[i]:5.2f}  {100 * self.ova_accuracy[i]:7.2f}  {self.support[i]:7d}"
            )
        lines += ["", "confusion (rows = true, cols = predicted)"]
        for i, name in enumerate(self.labels):
            lines.append(f"{name:<{width}}  " + " ".join(f"{v:6d}" for v in self.confusion[i]))
        return "\n".join(lines)


def confusion_matrix(y_true, y_pred, num_classes: int) -> np.ndarray:
    y_true = np.asarray(y_true, dtype=np.int64).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=np.int64).reshape(-1)
    if y_true.shape != y_pred.shape:
        raise ContractError("y_true and y_pred differ in length")
    if y_true.size and (y_true.min() < 0 or y_true.max() >= num_classes or y_pred.min() < 0
                        or y_pred.max() >= num_classes):
        raise ContractError("labels outside [0, num_classes)")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    np.divide(num, den, out=out, where=den > 0)
    return out


def report_from_confusion(cm, labels=None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    total = int(cm.sum())
    if total == 0:
        raise ContractError("cannot score an empty evaluation set")
    c = cm.shape[0]
    labels = list(labels) if labels is not None else [str(i) for i in range(c)]
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    precision = _ratio(tp, predicted)
    recall = _ratio(tp, support)
    f1 = _ratio(2 * tp, support + predicted)
    tn = total - support - predicted + tp
    ova = (tp + tn) / total
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * support).sum() / total),
        ova_binary_accuracy=float(ova.mean()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        ova_accuracy=ova.tolist(),
        support=support.tolist(),
        confusion=cm.tolist(),
        labels=labels,
    )


def compute_metrics(y_true, y_pred, num_classes: int, labels=None) -> MetricsReport:
    return report_from_confusion(confusion_matrix(y_true, y_pred, num_classes), labels)
