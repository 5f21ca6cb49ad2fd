"""Hypnogram agreement: confusion counts, accuracy and diagnostic odds ratio.

BS (label 1) is the positive class throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .ingest import Hypnogram


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        for name in ("tp", "tn", "fp", "fn"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise DataError(f"confusion count {name} must be a nonnegative integer")
            object.__setattr__(self, name, int(v))

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def swapped(self) -> ConfusionMatrix:
        """Counts with WS taken as the positive class instead."""
        return ConfusionMatrix(tp=self.tn, tn=self.tp, fp=self.fn, fn=self.fp)


def confusion(pred: Hypnogram, truth: Hypnogram) -> ConfusionMatrix:
    if not pred.same_grid(truth):
        raise DataError(
            "grid mismatch: hypnograms differ in start, stride or length "
            f"({pred.start_time_s}/{pred.stride_s}/{len(pred)} vs "
            f"{truth.start_time_s}/{truth.stride_s}/{len(truth)})"
        )
    p = pred.labels.astype(bool)
    t = truth.labels.astype(bool)
    return ConfusionMatrix(
        tp=int(np.sum(p & t)),
        tn=int(np.sum(~p & ~t)),
        fp=int(np.sum(p & ~t)),
        fn=int(np.sum(~p & t)),
    )


def accuracy(cm: ConfusionMatrix) -> float:
    if cm.total == 0:
        raise DataError("accuracy of an empty confusion matrix is undefined")
    return (cm.tp + cm.tn) / cm.total


def dor(cm: ConfusionMatrix, correction: str = "none") -> float:
    """Diagnostic odds ratio ``(tp*tn) / (fp*fn)``.

    With ``correction='none'`` a zero denominator gives ``inf`` when the
    numerator is positive and ``nan`` (undefined) when it is zero too.
    ``'haldane-0.5'`` adds 0.5 to every cell first, which is always finite.
    """
    if cm.total == 0:
        raise DataError("DOR of an empty confusion matrix is undefined")
    if correction == "none":
        num, den = cm.tp * cm.tn, cm.fp * cm.fn
        if den == 0:
            return math.inf if num > 0 else math.nan
        return num / den
    if correction == "haldane-0.5":
        return ((cm.tp + 0.5) * (cm.tn + 0.5)) / ((cm.fp + 0.5) * (cm.fn + 0.5))
    raise DataError(f"unknown DOR correction {correction!r}")


def dor_to_json(value: float):
    """JSON-safe DOR: a number, ``"inf"``, or ``None`` when undefined."""
    if math.isnan(value):
        return None
    if math.isinf(value):
        return "inf"
    return value


def report(pred: Hypnogram, truth: Hypnogram, correction: str = "none") -> dict:
    cm = confusion(pred, truth)
    return {
        "tp": cm.tp, "tn": cm.tn, "fp": cm.fp, "fn": cm.fn,
        "accuracy": accuracy(cm),
        "dor": dor_to_json(dor(cm, correction)),
    }


def disagreements(pred: Hypnogram, truth: Hypnogram) -> list[tuple[float, int, int]]:
    """``(time_s, predicted, true)`` for every window where the two differ."""
    if not pred.same_grid(truth):
        raise DataError("grid mismatch between hypnograms")
    idx = np.flatnonzero(pred.labels != truth.labels)
    times = pred.times
    return [(float(times[i]), int(pred.labels[i]), int(truth.labels[i])) for i in idx]
