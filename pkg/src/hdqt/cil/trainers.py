"""Task-stream drivers for the incremental methods."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..quantizer import QuantConfig
from ..record import RunRecord
from .estimator import IncrementalFCNClassifier
from .metrics import AccuracyMatrix, forgetting_curve, per_class_accuracy


@dataclass
class Hyperparams:
    """Training settings; defaults are the HAR values (lr 0.01 decayed x0.1 at epoch 50)."""

    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 2e-4
    lr_schedule: list = field(default_factory=lambda: [[50, 0.1]])
    epochs: int = 100
    batch_size: int = 128
    memory_size: int = 200
    kd_lambda: float = 3.0
    temperature: float = 2.0
    bic_split: float = 0.1
    bic_epochs: int = 100
    bic_lr: float = 0.01
    n_hidden: int = 2
    hidden_width: int | None = None

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def make_estimator(method, hp: Hyperparams, cfg: QuantConfig | None, seed, nme=False):
    return IncrementalFCNClassifier(
        method=method, quant=cfg, n_hidden=hp.n_hidden, hidden_width=hp.hidden_width,
        lr=hp.lr, momentum=hp.momentum, weight_decay=hp.weight_decay,
        lr_schedule=tuple(tuple(s) for s in hp.lr_schedule), epochs=hp.epochs,
        batch_size=hp.batch_size, memory_size=hp.memory_size, kd_lambda=hp.kd_lambda,
        temperature=hp.temperature, bic_split=hp.bic_split, bic_epochs=hp.bic_epochs,
        bic_lr=hp.bic_lr, nme=nme, random_state=seed,
    )


def precision_label(cfg):
    return "fp" if cfg is None else f"{cfg.input_bits}b{cfg.accum_bits}a"


def run_stream(estimator, dataset, stream, *, label=None, seed=0, config=None, method=None):
    """Feed ``stream`` task by task and evaluate on every seen class after each task."""
    t0 = time.perf_counter()
    acc = AccuracyMatrix(dataset.n_classes, len(stream), stream.class_order)
    Xte_all, yte_all = dataset.features[dataset.test_idx], dataset.labels[dataset.test_idx]
    for i, task in enumerate(stream):
        estimator.partial_fit(dataset.features[task.train_idx], dataset.labels[task.train_idx])
        seen = stream.seen_classes(i)
        mask = np.isin(yte_all, seen)
        pred = estimator.predict(Xte_all[mask])
        acc.record(i, per_class_accuracy(yte_all[mask], pred, seen))
    cfg = estimator._cfg()
    method = method or estimator.method
    return RunRecord(
        label=label or f"{method}/{precision_label(cfg)}",
        method=method,
        seed=int(seed),
        config=config or {},
        class_order=[int(c) for c in stream.class_order],
        task_classes=[list(t.classes) for t in stream],
        accuracy=acc.to_list(),
        task_accuracy=acc.averages(),
        forgetting=forgetting_curve(acc) if len(stream) > 1 else [],
        final_accuracy=acc.task_average(len(stream) - 1),
        gemm_stats=estimator.stats_.to_dict() if cfg is not None else {},
        loss_curves=[list(map(float, c)) for c in estimator.loss_curve_],
        wall_clock=time.perf_counter() - t0,
    )


def train_nocl(dataset, stream, hp, cfg, seed):
    """Joint training on every class at once; ``stream`` should be a single task."""
    return run_stream(make_estimator("finetune", hp, cfg, seed), dataset, stream,
                      seed=seed, method="nocl", label=f"nocl/{precision_label(cfg)}")


def train_finetune(dataset, stream, hp, cfg, seed):
    return run_stream(make_estimator("finetune", hp, cfg, seed), dataset, stream, seed=seed)


def train_lwf(dataset, stream, hp, cfg, seed):
    return run_stream(make_estimator("lwf", hp, cfg, seed), dataset, stream, seed=seed)


def train_icarl(dataset, stream, hp, cfg, seed, use_nme=False):
    method = "icarl_nme" if use_nme else "icarl"
    return run_stream(make_estimator("icarl", hp, cfg, seed, nme=use_nme), dataset, stream,
                      seed=seed, method=method, label=f"{method}/{precision_label(cfg)}")


def train_bic(dataset, stream, hp, cfg, seed):
    return run_stream(make_estimator("bic", hp, cfg, seed), dataset, stream, seed=seed)
