"""Per-class accuracy bookkeeping and forgetting."""

from __future__ import annotations

import math

import numpy as np


class AccuracyMatrix:
    """``acc[c, i]``: accuracy on class ``c`` after task ``i``; NaN before ``c`` arrives.

    Rows are indexed by class id, not arrival order; ``class_order`` holds the
    arrival order.
    """

    def __init__(self, n_classes, n_tasks, class_order=None):
        self.acc = np.full((n_classes, n_tasks), np.nan)
        self.class_order = (np.arange(n_classes) if class_order is None
                            else np.asarray(class_order, dtype=np.int64))

    @classmethod
    def from_array(cls, acc, class_order=None):
        acc = np.asarray(acc, dtype=np.float64)
        m = cls(acc.shape[0], acc.shape[1], class_order)
        m.acc = acc.copy()
        return m

    @property
    def n_tasks(self):
        return self.acc.shape[1]

    def record(self, task, per_class):
        for c, a in per_class.items():
            if not 0.0 <= a <= 1.0:
                raise ValueError(f"accuracy {a} for class {c} outside [0, 1]")
            self.acc[c, task] = a

    def seen(self, task):
        return ~np.isnan(self.acc[:, task])

    def task_average(self, task):
        return float(np.nanmean(self.acc[:, task]))

    def averages(self):
        return [self.task_average(i) for i in range(self.n_tasks)]

    def final(self):
        return self.acc[:, -1]

    def to_list(self):
        return [[None if np.isnan(v) else float(v) for v in row] for row in self.acc]

    @classmethod
    def from_list(cls, rows, class_order=None):
        arr = np.array([[np.nan if v is None else v for v in row] for row in rows], dtype=np.float64)
        return cls.from_array(arr, class_order)


def forgetting_score(acc: AccuracyMatrix, task):
    """Mean over classes seen before ``task`` of best earlier accuracy minus current accuracy."""
    if task < 1 or task >= acc.n_tasks:
        raise ValueError(f"forgetting is defined for tasks 1..{acc.n_tasks - 1}, got {task}")
    prior = acc.acc[:, :task]
    old = ~np.all(np.isnan(prior), axis=1)
    best = np.nanmax(prior[old], axis=1)
    # correctly rounded sum, so the score does not depend on summation order
    return math.fsum(best - acc.acc[old, task]) / int(old.sum())


def forgetting_curve(acc: AccuracyMatrix):
    return [forgetting_score(acc, i) for i in range(1, acc.n_tasks)]


def per_class_accuracy(y_true, y_pred, classes):
    out = {}
    for c in classes:
        mask = y_true == c
        if mask.any():
            out[int(c)] = float(np.mean(y_pred[mask] == c))
    return out
