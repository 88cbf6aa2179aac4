"""Confusion counts and the ACC / F1 / MCC triple."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidationError


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    f1: float
    mcc: float


def _check_binary(xs, what):
    for x in xs:
        if x not in (0, 1):
            raise ValidationError(f"{what} must be 0 or 1, got {x!r}")


def confusion(preds, labels) -> ConfusionMatrix:
    preds, labels = [int(p) for p in preds], [int(y) for y in labels]
    if len(preds) != len(labels):
        raise ValidationError(f"{len(preds)} predictions for {len(labels)} labels")
    _check_binary(preds, "predictions")
    _check_binary(labels, "labels")
    tp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 1)
    tn = sum(1 for p, y in zip(preds, labels) if p == 0 and y == 0)
    fp = sum(1 for p, y in zip(preds, labels) if p == 1 and y == 0)
    return ConfusionMatrix(tp, tn, fp, len(preds) - tp - tn - fp)


def metrics(cm: ConfusionMatrix) -> MetricsReport:
    """ACC, F1 and MCC; F1 and MCC fall back to 0 when their denominators vanish."""
    if cm.total < 1:
        raise ValidationError("cannot score an empty confusion matrix")
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    acc = (tp + tn) / cm.total
    f1_den = 2 * tp + fp + fn
    f1 = 2 * tp / f1_den if f1_den else 0.0
    # integer product keeps the zero-factor test exact
    prod = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(prod) if prod else 0.0
    return MetricsReport(acc=acc, f1=f1, mcc=mcc)


def score(preds, labels) -> MetricsReport:
    return metrics(confusion(preds, labels))
