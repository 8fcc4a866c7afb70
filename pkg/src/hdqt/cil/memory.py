"""Herding exemplar selection and the fixed-budget replay memory."""

from __future__ import annotations

import logging

import numpy as np

from ..data import DataError

log = logging.getLogger(__name__)


def herding_select(features, k):
    """Greedy herding: indices whose running mean tracks the class mean.

    At step ``i`` the sample minimizing ``||mu - (sum_selected + x) / i||`` is
    taken, without replacement; ``argmin`` breaks ties toward the lowest index.
    """
    features = np.asarray(features, dtype=np.float64)
    n = features.shape[0]
    if n == 0:
        raise DataError("herding on an empty class")
    if not 0 <= k <= n:
        raise ValueError(f"k must be in [0, {n}], got {k}")
    mu = features.mean(axis=0)
    running = np.zeros_like(mu)
    available = np.ones(n, dtype=bool)
    chosen = []
    for i in range(1, k + 1):
        cand = (running + features) / i
        dist = np.linalg.norm(mu - cand, axis=1)
        dist[~available] = np.inf
        j = int(np.argmin(dist))
        chosen.append(j)
        available[j] = False
        running += features[j]
    return np.array(chosen, dtype=np.int64)


class ReplayMemory:
    """Per-class exemplar lists kept in herding order under a total budget."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.exemplars = {}

    def __len__(self):
        return sum(len(v) for v in self.exemplars.values())

    @property
    def classes(self):
        return list(self.exemplars)

    def quota(self, n_classes):
        q = self.capacity // n_classes
        if q < 1:
            log.warning("memory of %d cannot hold %d classes; keeping 1 exemplar each",
                        self.capacity, n_classes)
            q = 1
        return q

    def reduce(self, quota):
        for c in self.exemplars:
            self.exemplars[c] = self.exemplars[c][:quota]

    def add(self, cls, samples):
        self.exemplars[cls] = np.array(samples, copy=True)

    def arrays(self):
        """Stacked ``(X, y)`` of every stored exemplar, classes in insertion order."""
        if not self.exemplars:
            return None, None
        xs = [v for v in self.exemplars.values()]
        ys = [np.full(len(v), c, dtype=np.int64) for c, v in self.exemplars.items()]
        return np.concatenate(xs), np.concatenate(ys)
