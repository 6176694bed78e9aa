"""Desk-scale victims: synthetic prototype datasets and a small SGD trainer with backprop."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (Architecture, Conv2D, Dataset, Dense, Flatten, FloatModel, MaxPool, ReLU,
                    filter_count, weight_shape)


class TrainingDiverged(Exception):
    """Loss became non-finite; message carries the epoch index."""


@dataclass(frozen=True)
class SynthSpec:
    classes: int = 4
    per_class: int = 200       # training samples per class
    test_per_class: int = 50
    input_shape: tuple = (1, 8, 8)
    noise: float = 0.5
    seed: int = 7

    def __post_init__(self):
        if self.classes < 4 or self.per_class < 1 or self.test_per_class < 1:
            raise ValueError("need >= 4 classes and positive sample counts")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.1
    batch_size: int = 32
    seed: int = 2

    def __post_init__(self):
        if self.epochs < 1 or self.lr <= 0 or self.batch_size < 1:
            raise ValueError("epochs/lr/batch_size must be positive")


def desk_architecture(classes: int = 4, input_shape=(1, 8, 8)) -> Architecture:
    """The frozen desk victim: two small conv blocks feeding one dense head."""
    c, h, w = input_shape
    h2, w2 = (h - 2) // 2 - 2, (w - 2) // 2 - 2
    return Architecture((Conv2D(c, 8, 3), ReLU(), MaxPool(2), Conv2D(8, 16, 3), ReLU(),
                         Flatten(), Dense(16 * h2 * w2, classes)), input_shape, classes)


def class_prototypes(spec: SynthSpec) -> np.ndarray:
    """Orthonormal-ish seeded patterns, one per class, scaled to unit per-pixel RMS."""
    dim = int(np.prod(spec.input_shape))
    if spec.classes > dim:
        raise ValueError("more classes than input dimensions")
    rng = np.random.default_rng(spec.seed)
    q, _ = np.linalg.qr(rng.standard_normal((dim, spec.classes)))
    return (q.T * np.sqrt(dim)).reshape((spec.classes,) + spec.input_shape)


def gen_synthetic(spec: SynthSpec):
    """(train, test) datasets: prototype + Gaussian noise, disjoint seeded draws."""
    protos = class_prototypes(spec)
    rng = np.random.default_rng(spec.seed + 1)

    def draw(per_class):
        labels = np.repeat(np.arange(spec.classes), per_class)
        noise = rng.standard_normal((len(labels),) + spec.input_shape) * spec.noise
        return Dataset(protos[labels] + noise, labels)

    return draw(spec.per_class), draw(spec.test_per_class)


# ------------------------------------------------------------ forward/backward

def _conv_fwd(x, w, b, stride, padding):
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    k = w.shape[2]
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    return np.einsum("nchwij,ocij->nohw", win, w, optimize=True) + b[None, :, None, None], x


def _conv_bwd(xp, w, stride, padding, dout):
    n, cin, hp, wp = xp.shape
    k = w.shape[2]
    ho, wo = dout.shape[2], dout.shape[3]
    dw = np.zeros_like(w)
    dxp = np.zeros_like(xp)
    for i in range(k):
        for j in range(k):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            dw[:, :, i, j] = np.einsum("nchw,nohw->oc", patch, dout, optimize=True)
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                np.einsum("nohw,oc->nchw", dout, w[:, :, i, j], optimize=True)
    db = dout.sum(axis=(0, 2, 3))
    dx = dxp[:, :, padding:hp - padding, padding:wp - padding]
    return dw, db, dx


def _pool_fwd(x, w):
    n, c, h, wd = x.shape
    xr = x.reshape(n, c, h // w, w, wd // w, w).transpose(0, 1, 2, 4, 3, 5) \
          .reshape(n, c, h // w, wd // w, w * w)
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, (idx, x.shape)


def _pool_bwd(cache, w, dout):
    idx, (n, c, h, wd) = cache
    dxr = np.zeros((n, c, h // w, wd // w, w * w))
    np.put_along_axis(dxr, idx[..., None], dout[..., None], axis=-1)
    return dxr.reshape(n, c, h // w, wd // w, w, w).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, wd)


def _forward_train(arch, weights, biases, x):
    caches = []
    p = 0
    for layer in arch.layers:
        if isinstance(layer, Conv2D):
            out, xp = _conv_fwd(x, weights[p], biases[p], layer.stride, layer.padding)
            caches.append(("conv", p, layer, xp))
            x = out
            p += 1
        elif isinstance(layer, Dense):
            caches.append(("dense", p, layer, x))
            x = x @ weights[p].T + biases[p]
            p += 1
        elif isinstance(layer, ReLU):
            caches.append(("relu", None, layer, x))
            x = np.maximum(x, 0.0)
        elif isinstance(layer, MaxPool):
            out, cache = _pool_fwd(x, layer.window)
            caches.append(("pool", None, layer, cache))
            x = out
        else:
            caches.append(("flatten", None, layer, x.shape))
            x = x.reshape(len(x), -1)
    return x, caches


def _softmax_ce(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = len(labels)
    loss = -float(logp[np.arange(n), labels].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    return loss, dlogits / n


def _grads(arch, weights, biases, inputs, labels):
    logits, caches = _forward_train(arch, weights, biases, np.asarray(inputs, dtype=np.float64))
    loss, d = _softmax_ce(logits, np.asarray(labels))
    dws = [None] * len(weights)
    dbs = [None] * len(biases)
    for kind, p, layer, cache in reversed(caches):
        if kind == "conv":
            dws[p], dbs[p], d = _conv_bwd(cache, weights[p], layer.stride, layer.padding, d)
        elif kind == "dense":
            dws[p] = d.T @ cache
            dbs[p] = d.sum(axis=0)
            d = d @ weights[p]
        elif kind == "relu":
            d = d * (cache > 0)
        elif kind == "pool":
            d = _pool_bwd(cache, layer.window, d)
        else:
            d = d.reshape(cache)
    return loss, dws, dbs


def gradient(model: FloatModel, inputs, labels):
    """Backprop gradients of mean cross-entropy: (weight grads, bias grads)."""
    _, dws, dbs = _grads(model.architecture, model.weights, model.biases, inputs, labels)
    return dws, dbs


def batch_loss(model: FloatModel, inputs, labels) -> float:
    loss, _, _ = _grads(model.architecture, model.weights, model.biases, inputs, labels)
    return loss


def train(architecture: Architecture, data: Dataset, cfg: TrainConfig,
          loss_log: list | None = None) -> FloatModel:
    """Plain minibatch SGD on cross-entropy; deterministic given cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    for _, layer in architecture.parametric_layers():
        shape = weight_shape(layer)
        fan_in = int(np.prod(shape[1:]))
        weights.append(rng.standard_normal(shape) * np.sqrt(2.0 / fan_in))
        biases.append(np.zeros(filter_count(layer)))
    n = len(data)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, dws, dbs = _grads(architecture, weights, biases,
                                    data.inputs[idx], data.labels[idx])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss {loss} at epoch {epoch}")
            epoch_losses.append(loss)
            for p in range(len(weights)):
                weights[p] = weights[p] - cfg.lr * dws[p]
                biases[p] = biases[p] - cfg.lr * dbs[p]
        if loss_log is not None:
            loss_log.append(float(np.mean(epoch_losses)))
    return FloatModel(architecture, weights, biases)
