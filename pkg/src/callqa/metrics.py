"""Confusion counts, precision/recall/F1 and the malpractice classification error.

Malpractice (label 1) is the positive class. A metric whose denominator is
zero comes back as ``None`` rather than 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError

Metric = Optional[float]
MODES = ("pos", "neg", "macro", "weighted")


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def flipped(self) -> "ConfusionMatrix":
        """The same counts with class 0 treated as positive."""
        return ConfusionMatrix(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def to_dict(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


def _labels(y) -> np.ndarray:
    a = np.asarray(y)
    if a.ndim != 1:
        raise InvalidInputError("labels must be one-dimensional")
    if a.size and not np.all((a == 0) | (a == 1)):
        raise InvalidInputError("labels must be 0 or 1")
    return a.astype(int)


def confusion(y_true, y_pred) -> ConfusionMatrix:
    t, p = _labels(y_true), _labels(y_pred)
    if t.size != p.size:
        raise InvalidInputError(f"length mismatch: {t.size} true vs {p.size} predicted")
    if t.size == 0:
        raise InvalidInputError("no labels to evaluate")
    tp = int(np.sum((t == 1) & (p == 1)))
    fp = int(np.sum((t == 0) & (p == 1)))
    fn = int(np.sum((t == 1) & (p == 0)))
    return ConfusionMatrix(tp, fp, fn, t.size - tp - fp - fn)


def _ratio(num: int, den: int) -> Metric:
    return num / den if den else None


def precision(cm: ConfusionMatrix) -> Metric:
    return _ratio(cm.tp, cm.tp + cm.fp)


def recall(cm: ConfusionMatrix) -> Metric:
    return _ratio(cm.tp, cm.tp + cm.fn)


def f1(cm: ConfusionMatrix) -> Metric:
    p, r = precision(cm), recall(cm)
    if p is None or r is None or p + r == 0:
        return None
    return 2 * p * r / (p + r)


def mce(cm: ConfusionMatrix) -> Metric:
    """Share of true malpractice calls predicted as non-malpractice."""
    return _ratio(cm.fn, cm.tp + cm.fn)


def _averaged(fn, cm: ConfusionMatrix, mode: str) -> Metric:
    if mode not in MODES:
        raise InvalidInputError(f"unknown averaging mode {mode!r}; expected one of {MODES}")
    support = {"pos": cm.tp + cm.fn, "neg": cm.tn + cm.fp}
    # a class missing from y_true has no term of its own
    per = {"pos": fn(cm) if support["pos"] else None,
           "neg": fn(cm.flipped()) if support["neg"] else None}
    if mode in per:
        return per[mode]
    if per["pos"] is None or per["neg"] is None:
        return None
    if mode == "macro":
        return (per["pos"] + per["neg"]) / 2
    n = support["pos"] + support["neg"]
    return (support["pos"] * per["pos"] + support["neg"] * per["neg"]) / n


def averaged_precision(y_true, y_pred, mode: str = "weighted") -> Metric:
    return _averaged(precision, confusion(y_true, y_pred), mode)


def averaged_recall(y_true, y_pred, mode: str = "weighted") -> Metric:
    return _averaged(recall, confusion(y_true, y_pred), mode)


def averaged_f1(y_true, y_pred, mode: str = "weighted") -> Metric:
    return _averaged(f1, confusion(y_true, y_pred), mode)


def metrics_block(cm: ConfusionMatrix) -> dict:
    """The report's metrics section; undefined values are ``None``."""
    return {
        "confusion": cm.to_dict(),
        "precision": {m: _averaged(precision, cm, m) for m in MODES},
        "recall": {m: _averaged(recall, cm, m) for m in MODES},
        "f1": {m: _averaged(f1, cm, m) for m in MODES},
        "mce": mce(cm),
    }


def lookup(block: dict, name: str) -> Metric:
    """Read a metric such as ``"recall_weighted"`` or ``"mce"`` from a block."""
    if name == "mce":
        return block["mce"]
    metric, _, mode = name.partition("_")
    if metric not in ("precision", "recall", "f1") or mode not in MODES:
        raise InvalidInputError(f"unknown metric name {name!r}")
    return block[metric][mode]


def fmt(value: Metric, digits: int = 4) -> str:
    return "n/a" if value is None else f"{value:.{digits}f}"
