"""Serializable per-seed experiment output."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .cil.metrics import AccuracyMatrix


@dataclass
class RunRecord:
    """Everything needed to redraw a run's curves without retraining.

    ``accuracy`` is the class-by-task matrix (``None`` before a class
    arrives). ``task_accuracy[i]`` is the mean class accuracy after task
    ``i``; ``forgetting[i - 1]`` is the forgetting score at task ``i``.
    """

    label: str
    method: str
    seed: int
    config: dict
    class_order: list
    task_classes: list
    accuracy: list
    task_accuracy: list
    forgetting: list
    final_accuracy: float
    gemm_stats: dict = field(default_factory=dict)
    loss_curves: list = field(default_factory=list)
    wall_clock: float = 0.0

    def accuracy_matrix(self) -> AccuracyMatrix:
        return AccuracyMatrix.from_list(self.accuracy, self.class_order)

    def final_per_class(self):
        """Final accuracy of every class, keyed by class id."""
        return {int(c): float(self.accuracy[c][-1]) for c in self.class_order}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def numeric_signature(self):
        """The record minus timing, for determinism checks."""
        d = self.to_dict()
        d.pop("wall_clock")
        return d


def per_class_delta(first: RunRecord, second: RunRecord) -> np.ndarray:
    """Final per-class accuracy of ``second`` minus ``first``, in ``first``'s arrival order.

    Positive entries mean the second run is better on that class.
    """
    a, b = first.final_per_class(), second.final_per_class()
    if set(a) != set(b):
        raise ValueError(f"runs cover different classes: {sorted(set(a) ^ set(b))}")
    return np.array([b[c] - a[c] for c in first.class_order])
