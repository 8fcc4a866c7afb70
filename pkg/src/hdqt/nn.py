"""Fully connected ReLU network whose GEMMs run through :mod:`hdqt.qgemm`.

Weights are stored ``(in_dim, out_dim)`` so a layer computes ``x @ W + b``.
Master weights stay at working precision; every GEMM quantizes its own
operands. Passing ``cfg=None`` anywhere selects the unquantized path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import ParameterError, ShapeError, as_matrix, matmul_ref
from .qgemm import GemmStats, qgemm_backward_input, qgemm_backward_weight, qgemm_forward

CHECKPOINT_VERSION = 1


@dataclass
class LinearLayer:
    weights: np.ndarray
    bias: np.ndarray

    @property
    def in_dim(self):
        return self.weights.shape[0]

    @property
    def out_dim(self):
        return self.weights.shape[1]

    @classmethod
    def init(cls, in_dim, out_dim, rng):
        bound = 1.0 / np.sqrt(in_dim)
        return cls(
            weights=rng.uniform(-bound, bound, (in_dim, out_dim)),
            bias=rng.uniform(-bound, bound, out_dim),
        )

    def copy(self):
        return LinearLayer(self.weights.copy(), self.bias.copy())


@dataclass
class FcnModel:
    """Hidden layers of constant width followed by a growable classification head."""

    hidden: list
    head: LinearLayer

    @classmethod
    def init(cls, in_dim, n_classes, rng, n_hidden=2, width=None):
        width = in_dim if width is None else width
        hidden = []
        d = in_dim
        for i in range(n_hidden):
            hidden.append(LinearLayer.init(d, width, rng.split(f"hidden{i}")))
            d = width
        return cls(hidden=hidden, head=LinearLayer.init(d, n_classes, rng.split("head")))

    @property
    def layers(self):
        return [*self.hidden, self.head]

    @property
    def in_dim(self):
        return self.layers[0].in_dim

    @property
    def n_classes(self):
        return self.head.out_dim

    def parameters(self):
        out = []
        for layer in self.layers:
            out += [layer.weights, layer.bias]
        return out

    def copy(self):
        return FcnModel([h.copy() for h in self.hidden], self.head.copy())


@dataclass
class ForwardCache:
    inputs: list
    pre_activations: list

    @property
    def features(self):
        """Penultimate activations (the head's input)."""
        return self.inputs[-1]


def _gemm(x, w, cfg, stats):
    if cfg is None:
        return matmul_ref(x, w)
    out, _ = qgemm_forward(x, w, cfg, stats)
    return out


def forward(model: FcnModel, x, cfg=None, stats: GemmStats | None = None):
    """Return ``(logits, cache)``."""
    x = as_matrix(x, "x")
    if x.shape[1] != model.in_dim:
        raise ShapeError(f"input width {x.shape[1]} does not match model width {model.in_dim}")
    inputs, pre = [], []
    h = x
    for layer in model.hidden:
        inputs.append(h)
        z = _gemm(h, layer.weights, cfg, stats) + layer.bias
        pre.append(z)
        h = np.maximum(z, 0.0)
    inputs.append(h)
    logits = _gemm(h, model.head.weights, cfg, stats) + model.head.bias
    return logits, ForwardCache(inputs, pre)


def backward(model: FcnModel, cache: ForwardCache, dlogits, cfg=None, rng=None,
             stats: GemmStats | None = None):
    """Gradients ``[(dW, db), ...]`` in layer order.

    ``rng`` must be a stream unique to this step; it is split per layer and per
    tensor role. It is unused on the unquantized path.
    """
    dz = as_matrix(dlogits, "dlogits")
    layers = model.layers
    if dz.shape != (cache.inputs[-1].shape[0], model.n_classes):
        raise ShapeError(f"dlogits shape {dz.shape} does not match forward output")
    if cfg is not None and rng is None:
        raise ParameterError("quantized backward needs an rng")
    grads = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer, x = layers[i], cache.inputs[i]
        if cfg is None:
            dw = matmul_ref(x.T, dz)
        else:
            dw = qgemm_backward_weight(x, dz, cfg, rng.split(f"layer{i}/w"), stats)
        grads[i] = (dw, dz.sum(axis=0))
        if i == 0:
            break
        if cfg is None:
            dx = matmul_ref(dz, layer.weights.T)
        else:
            dx = qgemm_backward_input(dz, layer.weights, cfg, rng.split(f"layer{i}/x"), stats)
        dz = dx * (cache.pre_activations[i - 1] > 0)
    return grads


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def ce_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient wrt ``logits``."""
    logits = as_matrix(logits, "logits")
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"labels must lie in [0, {c}), got range [{labels.min()}, {labels.max()}]")
    logp = _log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    return float(loss), grad / n


def kd_loss(old_logits, new_logits, temperature=2.0):
    """Distillation cross-entropy on the old-class slice of ``new_logits``.

    Both distributions are temperature-scaled probabilities, i.e.
    ``p**(1/T) / sum(p**(1/T))``; for softmax outputs that equals
    ``softmax(logits / T)`` over the slice, which is how it is evaluated.
    Returns the batch-mean loss and a gradient shaped like ``new_logits``.
    """
    if temperature <= 0:
        raise ParameterError(f"temperature must be > 0, got {temperature}")
    old_logits = as_matrix(old_logits, "old_logits")
    new_logits = as_matrix(new_logits, "new_logits")
    n, k = old_logits.shape
    if new_logits.shape[0] != n or new_logits.shape[1] < k:
        raise ShapeError(f"old logits {old_logits.shape} do not fit new logits {new_logits.shape}")
    target = np.exp(_log_softmax(old_logits / temperature))
    logp = _log_softmax(new_logits[:, :k] / temperature)
    loss = -(target * logp).sum(axis=1).mean()
    grad = np.zeros_like(new_logits)
    grad[:, :k] = (np.exp(logp) - target) / (temperature * n)
    return float(loss), grad


@dataclass
class SgdState:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 2e-4
    schedule: list = field(default_factory=lambda: [(50, 0.1)])
    velocity: list = field(default_factory=list)

    def lr_at(self, epoch):
        lr = self.lr
        for start, mult in self.schedule:
            if epoch >= start:
                lr *= mult
        return lr


def sgd_step(params, grads, state: SgdState, epoch):
    """Momentum SGD with coupled weight decay, updating ``params`` in place."""
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    if len(state.velocity) != len(params) or any(
        v.shape != p.shape for v, p in zip(state.velocity, params)
    ):
        state.velocity = [np.zeros_like(p) for p in params]
    lr = state.lr_at(epoch)
    for p, g, v in zip(params, grads, state.velocity):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        v *= state.momentum
        v += g + state.weight_decay * p
        p -= lr * v
    return params


def flat_grads(grads):
    return [g for pair in grads for g in pair]


def extend_head(model: FcnModel, new_class_count, rng):
    """Grow the head to ``new_class_count`` outputs, keeping existing columns bit-exact."""
    old = model.n_classes
    if new_class_count < old:
        raise ParameterError(f"cannot shrink head from {old} to {new_class_count}")
    if new_class_count == old:
        return model
    fresh = LinearLayer.init(model.head.in_dim, new_class_count - old, rng)
    model.head = LinearLayer(
        np.concatenate([model.head.weights, fresh.weights], axis=1),
        np.concatenate([model.head.bias, fresh.bias]),
    )
    return model


def save_model(model: FcnModel, path):
    """Write an ``.npz`` checkpoint: version, layer count, then ``W{i}``/``b{i}`` arrays."""
    arrays = {"format_version": np.array(CHECKPOINT_VERSION), "n_layers": np.array(len(model.layers))}
    for i, layer in enumerate(model.layers):
        arrays[f"W{i}"] = layer.weights
        arrays[f"b{i}"] = layer.bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> FcnModel:
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        n = int(data["n_layers"])
        layers = [LinearLayer(data[f"W{i}"].copy(), data[f"b{i}"].copy()) for i in range(n)]
    return FcnModel(hidden=layers[:-1], head=layers[-1])
