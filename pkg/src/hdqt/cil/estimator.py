"""Scikit-learn style class-incremental classifier over a quantized FCN."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from ..nn import (
    FcnModel,
    SgdState,
    backward,
    ce_loss,
    extend_head,
    flat_grads,
    forward,
    kd_loss,
    sgd_step,
)
from ..numerics import ParameterError, Rng
from ..qgemm import GemmStats
from ..quantizer import QuantConfig
from .memory import ReplayMemory, herding_select

log = logging.getLogger(__name__)

METHODS = ("finetune", "lwf", "icarl", "bic")
REPLAY_METHODS = ("icarl", "bic")


@dataclass
class BiasLayer:
    """Affine correction ``alpha * z + beta`` on the logit columns ``[start, stop)``."""

    start: int
    stop: int
    alpha: float = 1.0
    beta: float = 0.0

    def apply(self, logits):
        out = logits.copy()
        out[:, self.start:self.stop] = self.alpha * logits[:, self.start:self.stop] + self.beta
        return out


def _l2_normalize(f):
    return f / (np.linalg.norm(f, axis=1, keepdims=True) + 1e-12)


class IncrementalFCNClassifier(ClassifierMixin, BaseEstimator):
    """Fully connected classifier trained one task at a time.

    Each :meth:`partial_fit` call is one task whose classes must all be new.
    :meth:`fit` forgets everything and trains a single task, which is the
    non-incremental baseline when it receives every class.

    Parameters
    ----------
    method : {"finetune", "lwf", "icarl", "bic"}, default="finetune"
        ``finetune`` and ``lwf`` train on the new task only with cross-entropy
        over the new classes; ``lwf`` adds distillation from the previous
        model. ``icarl`` and ``bic`` replay herding exemplars, use
        cross-entropy over all seen classes plus distillation, and ``bic``
        finally fits a bias correction on a held-out balanced split.
    quant : QuantConfig, dict or None, default=None
        Precision of every GEMM; ``None`` trains unquantized.
    n_hidden : int, default=2
        Hidden layers, each ``hidden_width`` wide (default: input width).
    hidden_width : int or None, default=None
    lr, momentum, weight_decay : float
        SGD settings, reset at the start of each task.
    lr_schedule : sequence of (epoch, multiplier), default=((50, 0.1),)
    epochs, batch_size : int
    memory_size : int, default=200
        Exemplar budget shared by all seen classes (replay methods).
    kd_lambda, temperature : float
        Weight of the distillation term and its temperature.
    bic_split : float, default=0.1
        Held-out fraction for the bias-correction stage, balanced per class.
    bic_epochs, bic_lr : stage-two optimizer settings.
    nme : bool, default=False
        Classify by nearest exemplar mean in feature space (``icarl`` only).
        Exemplar means are kept for every ``icarl`` fit, so the flag can be
        flipped after training to compare both classifiers on one network.
    random_state : int, default=0

    Attributes
    ----------
    classes_ : ndarray
        Labels in arrival order; column ``k`` of :meth:`decision_function`
        is ``classes_[k]``.
    model_ : FcnModel
    memory_ : ReplayMemory or None
    bias_layers_ : list of BiasLayer
    stats_ : GemmStats
        Quantization counters and code histograms of all training GEMMs.
    loss_curve_ : list of list of float
        Mean training loss per epoch, one list per task.
    """

    def __init__(self, method="finetune", quant=None, n_hidden=2, hidden_width=None,
                 lr=0.01, momentum=0.9, weight_decay=2e-4, lr_schedule=((50, 0.1),),
                 epochs=100, batch_size=128, memory_size=200, kd_lambda=3.0,
                 temperature=2.0, bic_split=0.1, bic_epochs=100, bic_lr=0.01,
                 nme=False, random_state=0):
        self.method = method
        self.quant = quant
        self.n_hidden = n_hidden
        self.hidden_width = hidden_width
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.lr_schedule = lr_schedule
        self.epochs = epochs
        self.batch_size = batch_size
        self.memory_size = memory_size
        self.kd_lambda = kd_lambda
        self.temperature = temperature
        self.bic_split = bic_split
        self.bic_epochs = bic_epochs
        self.bic_lr = bic_lr
        self.nme = nme
        self.random_state = random_state

    # -- configuration -------------------------------------------------

    def _cfg(self):
        if self.quant is None or isinstance(self.quant, QuantConfig):
            return self.quant
        if isinstance(self.quant, dict):
            return QuantConfig(**self.quant)
        raise ParameterError(f"quant must be None, a QuantConfig or a dict, got {type(self.quant)}")

    def _check_params(self):
        if self.method not in METHODS:
            raise ParameterError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.nme and self.method != "icarl":
            raise ParameterError("nme evaluation is only defined for method='icarl'")
        if self.method == "bic" and not 0 < self.bic_split < 1:
            raise ParameterError(f"bic_split must be in (0, 1), got {self.bic_split}")
        if self.method in REPLAY_METHODS and self.memory_size < 1:
            raise ParameterError("replay methods need memory_size >= 1")

    def _reset(self):
        self._check_params()
        self.classes_ = np.array([], dtype=np.int64)
        self.model_ = None
        self.old_model_ = None
        self.old_bias_layers_ = []
        self.bias_layers_ = []
        self.memory_ = ReplayMemory(self.memory_size) if self.method in REPLAY_METHODS else None
        self.class_means_ = None
        self.n_tasks_ = 0
        self.stats_ = GemmStats()
        self.loss_curve_ = []
        self._rng = Rng(self.random_state)
        self._step = 0

    # -- public API ----------------------------------------------------

    def fit(self, X, y):
        self._reset()
        return self._learn_task(X, y, reset=True)

    def partial_fit(self, X, y):
        if not hasattr(self, "model_") or self.model_ is None:
            self._reset()
            return self._learn_task(X, y, reset=True)
        return self._learn_task(X, y, reset=False)

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False)
        if self.nme:
            return self._nme_scores(X)
        logits, _ = forward(self.model_, X, self._cfg())
        return self._apply_bias(logits, self.bias_layers_)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = z - z.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def transform(self, X):
        """Penultimate-layer features."""
        check_is_fitted(self, "model_")
        X = validate_data(self, X, reset=False)
        return self._features(X)

    # -- internals -----------------------------------------------------

    def _features(self, X, model=None):
        _, cache = forward(model or self.model_, X, self._cfg())
        return cache.features

    @staticmethod
    def _apply_bias(logits, layers):
        for layer in layers:
            logits = layer.apply(logits)
        return logits

    def _nme_scores(self, X):
        f = _l2_normalize(self._features(X))
        d = np.linalg.norm(f[:, None, :] - self.class_means_[None, :, :], axis=2)
        return -d

    def _learn_task(self, X, y, reset):
        X, y = validate_data(self, X, y, reset=reset)
        check_classification_targets(y)
        new = np.unique(y)
        seen = set(self.classes_.tolist())
        clash = [c for c in new.tolist() if c in seen]
        if clash:
            raise ValueError(f"classes {clash} were already learned; each task must bring new classes")
        n_old = len(self.classes_)
        self.classes_ = np.concatenate([self.classes_, new]) if n_old else new.copy()
        index = {c: i for i, c in enumerate(self.classes_.tolist())}
        yi = np.array([index[c] for c in y.tolist()], dtype=np.int64)
        task = self.n_tasks_
        trng = self._rng.split(f"task{task}")

        if self.model_ is None:
            self.model_ = FcnModel.init(X.shape[1], len(new), self._rng.split("init"),
                                        self.n_hidden, self.hidden_width)
        else:
            self.old_model_ = self.model_.copy()
            self.old_bias_layers_ = [BiasLayer(b.start, b.stop, b.alpha, b.beta) for b in self.bias_layers_]
            extend_head(self.model_, len(self.classes_), trng.split("head"))

        Xt, yt = X, yi
        if self.memory_ is not None and len(self.memory_):
            mx, my = self.memory_.arrays()
            Xt, yt = np.concatenate([X, mx]), np.concatenate([yi, my])

        val = None
        if self.method == "bic" and n_old:
            Xt, yt, val = self._split_validation(Xt, yt, n_old, trng.split("val"))

        self._train(Xt, yt, n_old, trng)

        if val is not None:
            self._fit_bias(*val, n_old)

        if self.memory_ is not None:
            self._update_memory(X, yi, n_old)
            if self.method == "icarl":
                self._compute_class_means()
        self.n_tasks_ += 1
        return self

    def _train(self, X, y, n_old, rng):
        cfg = self._cfg()
        sgd = SgdState(self.lr, self.momentum, self.weight_decay, list(self.lr_schedule))
        params = self.model_.parameters()
        use_kd = (self.method != "finetune" and self.old_model_ is not None
                  and n_old > 0 and self.kd_lambda > 0)
        new_only = self.method in ("finetune", "lwf")
        curve = []
        n = len(y)
        for epoch in range(self.epochs):
            order = rng.split(f"epoch{epoch}").permutation(n)
            total = 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                xb, yb = X[idx], y[idx]
                raw, cache = forward(self.model_, xb, cfg, self.stats_ if cfg else None)
                logits = self._apply_bias(raw, self.bias_layers_)
                if new_only:
                    loss, d_new = ce_loss(logits[:, n_old:], yb - n_old)
                    dlogits = np.zeros_like(logits)
                    dlogits[:, n_old:] = d_new
                else:
                    loss, dlogits = ce_loss(logits, yb)
                if use_kd:
                    old_raw, _ = forward(self.old_model_, xb, cfg)
                    old = self._apply_bias(old_raw, self.old_bias_layers_)
                    kd, dkd = kd_loss(old, logits, self.temperature)
                    loss += self.kd_lambda * kd
                    dlogits += self.kd_lambda * dkd
                for layer in self.bias_layers_:
                    dlogits[:, layer.start:layer.stop] *= layer.alpha
                grads = backward(self.model_, cache, dlogits, cfg,
                                 self._rng.split(f"step{self._step}"), self.stats_ if cfg else None)
                sgd_step(params, flat_grads(grads), sgd, epoch)
                self._step += 1
                total += loss * len(idx)
            curve.append(total / n)
        self.loss_curve_.append(curve)

    def _split_validation(self, X, y, n_old, rng):
        """Hold out the same number of samples from every seen class."""
        per_class = max(1, int(self.bic_split * self.memory_size / n_old))
        counts = np.bincount(y, minlength=len(self.classes_))
        smallest = counts[counts > 0].min()
        if per_class >= smallest:
            per_class = max(1, smallest // 2)
            log.warning("validation split reduced to %d per class", per_class)
        val_idx = []
        for c in range(len(self.classes_)):
            members = np.flatnonzero(y == c)
            val_idx.append(rng.split(f"class{c}").permutation(members)[:per_class])
        val_idx = np.sort(np.concatenate(val_idx))
        keep = np.ones(len(y), dtype=bool)
        keep[val_idx] = False
        return X[keep], y[keep], (X[val_idx], y[val_idx])

    def _fit_bias(self, Xv, yv, n_old):
        raw, _ = forward(self.model_, Xv, self._cfg())
        base = self._apply_bias(raw, self.bias_layers_)
        layer = BiasLayer(n_old, len(self.classes_))
        z = base[:, n_old:]
        for _ in range(self.bic_epochs):
            _, d = ce_loss(layer.apply(base), yv)
            d_alpha = float(np.sum(d[:, n_old:] * z))
            d_beta = float(np.sum(d[:, n_old:]))
            layer.alpha -= self.bic_lr * d_alpha
            layer.beta -= self.bic_lr * d_beta
        self.bias_layers_.append(layer)

    def _update_memory(self, X, yi, n_old):
        quota = self.memory_.quota(len(self.classes_))
        self.memory_.reduce(quota)
        for c in range(n_old, len(self.classes_)):
            xc = X[yi == c]
            feats = _l2_normalize(self._features(xc))
            pick = herding_select(feats, min(quota, len(xc)))
            self.memory_.add(c, xc[pick])

    def _compute_class_means(self):
        means = []
        for c in range(len(self.classes_)):
            f = _l2_normalize(self._features(self.memory_.exemplars[c]))
            m = f.mean(axis=0)
            means.append(m / (np.linalg.norm(m) + 1e-12))
        self.class_means_ = np.stack(means)
