"""Class-incremental learning: streams, replay, trainers and metrics."""

from .estimator import BiasLayer, IncrementalFCNClassifier
from .memory import ReplayMemory, herding_select
from .metrics import AccuracyMatrix, forgetting_curve, forgetting_score
from .stream import Task, TaskStream, single_task, split_tasks
from .trainers import (
    Hyperparams,
    run_stream,
    train_bic,
    train_finetune,
    train_icarl,
    train_lwf,
    train_nocl,
)

__all__ = [
    "AccuracyMatrix",
    "BiasLayer",
    "Hyperparams",
    "IncrementalFCNClassifier",
    "ReplayMemory",
    "Task",
    "TaskStream",
    "forgetting_curve",
    "forgetting_score",
    "herding_select",
    "run_stream",
    "single_task",
    "split_tasks",
    "train_bic",
    "train_finetune",
    "train_icarl",
    "train_lwf",
    "train_nocl",
]
