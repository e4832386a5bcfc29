"""Session metrics: accuracy, confusion matrices, prototype-similarity report.

The JSON schema is::

    {
      "sessions": int,
      "accuracies": [float, ...],          # one per session
      "accuracy_std": [float, ...],        # zeros for single runs
      "average": float,                    # unweighted mean over sessions
      "confusion": [[[int, ...], ...]],    # per session, rows = true class
      "confusion_labels": [[int, ...]],    # ascending class ids per session
      "prototype_similarity": [float, ...],# per old class at first increment
      "prototype_similarity_mean": float | null,
      "seeds": [int, ...],                 # per-trial seeds
      "trials": int,
      "config": {...} | null               # echo of the experiment config
    }

For aggregated multi-trial reports the confusion matrices are element-wise
sums over trials (row sums are then trials * per-class test count).

The CSV is one row per session: session,num_classes,accuracy,accuracy_std.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError


@dataclass
class MetricsReport:
    per_session_accuracy: list[float]
    average_accuracy: float
    confusion: list[np.ndarray]
    confusion_labels: list[tuple[int, ...]]
    prototype_similarity: list[float]
    prototype_similarity_mean: float | None
    seeds_used: list[int]
    per_session_std: list[float] = field(default_factory=list)
    trials: int = 1
    config_echo: dict | None = None

    def __post_init__(self):
        n = len(self.per_session_accuracy)
        if not self.per_session_std:
            self.per_session_std = [0.0] * n
        if len(self.confusion) != n or len(self.confusion_labels) != n:
            raise DataError("confusion data must align with per-session accuracies")
        for acc in self.per_session_accuracy:
            if not 0.0 <= acc <= 1.0:
                raise DataError(f"accuracy {acc} outside [0, 1]")

    @property
    def num_sessions(self) -> int:
        return len(self.per_session_accuracy)


def accuracy_and_confusion(
    true_ids: np.ndarray, pred_ids: np.ndarray, class_ids: tuple[int, ...]
) -> tuple[float, np.ndarray]:
    """Accuracy plus a [k, k] count matrix over `class_ids` (rows = true)."""
    index = {int(c): i for i, c in enumerate(class_ids)}
    k = len(class_ids)
    conf = np.zeros((k, k), dtype=np.int64)
    try:
        t = np.asarray([index[int(c)] for c in true_ids], dtype=np.intp)
        p = np.asarray([index[int(c)] for c in pred_ids], dtype=np.intp)
    except KeyError as exc:
        raise DataError(f"label {exc} not covered by the class list") from exc
    np.add.at(conf, (t, p), 1)
    total = len(true_ids)
    acc = float(np.trace(conf) / total) if total else 0.0
    return acc, conf


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "sessions": report.num_sessions,
        "accuracies": [float(a) for a in report.per_session_accuracy],
        "accuracy_std": [float(s) for s in report.per_session_std],
        "average": float(report.average_accuracy),
        "confusion": [m.astype(int).tolist() for m in report.confusion],
        "confusion_labels": [list(map(int, ids)) for ids in report.confusion_labels],
        "prototype_similarity": [float(s) for s in report.prototype_similarity],
        "prototype_similarity_mean": (
            None
            if report.prototype_similarity_mean is None
            else float(report.prototype_similarity_mean)
        ),
        "seeds": [int(s) for s in report.seeds_used],
        "trials": int(report.trials),
        "config": report.config_echo,
    }


def write_report_json(report: MetricsReport, path) -> None:
    text = json.dumps(report_to_dict(report), indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def write_report_csv(report: MetricsReport, path) -> None:
    lines = ["session,num_classes,accuracy,accuracy_std"]
    for i in range(report.num_sessions):
        lines.append(
            f"{i + 1},{len(report.confusion_labels[i])},"
            f"{report.per_session_accuracy[i]!r},{report.per_session_std[i]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_report_dict(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such report")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    for key in ("sessions", "accuracies", "average"):
        if key not in doc:
            raise FormatError(f"{path}: report is missing {key!r}")
    return doc
