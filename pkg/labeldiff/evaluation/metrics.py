from __future__ import annotations

from typing import Sequence

import numpy as np
from sklearn.metrics import accuracy_score, confusion_matrix as sk_confusion_matrix, f1_score

from labeldiff.enums import F1Average
from labeldiff.exceptions import LabelError, ShapeError


def check_predictions(preds: Sequence[int], labels: Sequence[int]):
    if len(preds) != len(labels):
        raise ShapeError(f'{len(preds)} predictions but {len(labels)} labels')
    if not len(labels):
        raise ShapeError('no predictions to score')


def check_classes(preds: Sequence[int], labels: Sequence[int], num_classes: int):
    values = np.concatenate([np.asarray(preds), np.asarray(labels)])
    if num_classes < 1 or values.min() < 0 or values.max() >= num_classes:
        raise LabelError(f'class indices must lie in [0, {num_classes}), got range [{values.min()}, {values.max()}]')


def accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    check_predictions(preds, labels)
    return float(accuracy_score(labels, preds))


def macro_f1(preds: Sequence[int], labels: Sequence[int], num_classes: int, average: F1Average = F1Average.MACRO) -> float:
    """
    Per-class F1 over all `num_classes` classes; a class absent from both sides scores 0
    and still counts in the macro mean.
    """
    check_predictions(preds, labels)
    check_classes(preds, labels, num_classes)
    return float(f1_score(labels, preds, labels=list(range(num_classes)), average=average.value, zero_division=0))


def confusion_matrix(preds: Sequence[int], labels: Sequence[int], num_classes: int) -> np.ndarray:
    """
    Rows are true classes, columns predictions.
    """
    check_predictions(preds, labels)
    check_classes(preds, labels, num_classes)
    return sk_confusion_matrix(labels, preds, labels=list(range(num_classes)))
