"""Class-incremental task streams."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..numerics import ParameterError


@dataclass(frozen=True)
class Task:
    classes: tuple
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass
class TaskStream:
    """Ordered tasks with pairwise disjoint class sets.

    ``class_order`` lists every class once, in arrival order.
    """

    tasks: list
    class_order: np.ndarray

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def seen_classes(self, task):
        """Classes introduced up to and including ``task``, in arrival order."""
        return [c for t in self.tasks[: task + 1] for c in t.classes]

    def arrival_task(self):
        """Map class id to the index of the task that introduces it."""
        return {c: i for i, t in enumerate(self.tasks) for c in t.classes}


def split_tasks(dataset, classes_per_task, rng, remainder="last", shuffle=True) -> TaskStream:
    """Partition classes into tasks after a seeded permutation.

    ``remainder="last"`` leaves a final, smaller task when the class count is
    not a multiple of ``classes_per_task``; ``"merge"`` folds those classes
    into the previous task instead.
    """
    if classes_per_task < 1:
        raise ParameterError(f"classes_per_task must be >= 1, got {classes_per_task}")
    if remainder not in ("last", "merge"):
        raise ParameterError(f"remainder must be 'last' or 'merge', got {remainder!r}")
    n = dataset.n_classes
    order = rng.permutation(n) if shuffle else np.arange(n)
    groups = [order[i:i + classes_per_task] for i in range(0, n, classes_per_task)]
    if remainder == "merge" and len(groups) > 1 and len(groups[-1]) < classes_per_task:
        tail = groups.pop()
        groups[-1] = np.concatenate([groups[-1], tail])
    train_labels = dataset.labels[dataset.train_idx]
    test_labels = dataset.labels[dataset.test_idx]
    tasks = []
    for g in groups:
        tasks.append(Task(
            classes=tuple(int(c) for c in g),
            train_idx=dataset.train_idx[np.isin(train_labels, g)],
            test_idx=dataset.test_idx[np.isin(test_labels, g)],
        ))
    return TaskStream(tasks=tasks, class_order=np.asarray(order, dtype=np.int64))


def single_task(dataset) -> TaskStream:
    """Every class in one task: the non-incremental baseline."""
    classes = tuple(range(dataset.n_classes))
    return TaskStream(
        tasks=[Task(classes, dataset.train_idx, dataset.test_idx)],
        class_order=np.arange(dataset.n_classes),
    )
