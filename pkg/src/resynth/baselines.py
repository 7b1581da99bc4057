"""Shallow trainable baselines over stored features.

A from-scratch multilayer perceptron (ReLU hidden layers, softmax output,
adaptive-moment optimizer with decoupled weight decay, early stopping on
validation loss) and a nearest-centroid classifier. Both are few-shot
comparators for the training-free resynthesis method.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .metrics import DistanceKind, distance

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class MlpConfig:
    hidden_layers: tuple[int, ...] = (512, 32)
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    max_epochs: int = 1000
    early_stop_patience: int = 10
    batch_size: int | None = None  # None: full batch
    init_seed: int = 0

    def __post_init__(self) -> None:
        if any(w <= 0 for w in self.hidden_layers):
            raise ValueError("hidden layer widths must be positive")
        if self.early_stop_patience < 1:
            raise ValueError("patience must be >= 1")


# Few-shot episodes use the reduced single-hidden-layer architecture.
FEWSHOT_HIDDEN = (512,)


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    classes: list[str]

    def __post_init__(self) -> None:
        dims_ok = all(
            w.shape[1] == b.shape[0] for w, b in zip(self.weights, self.biases)
        ) and all(
            self.weights[i].shape[1] == self.weights[i + 1].shape[0]
            for i in range(len(self.weights) - 1)
        )
        if not dims_ok or self.weights[-1].shape[1] != len(self.classes):
            raise ValueError("parameter shapes do not chain from input dim to class count")
        if not all(np.all(np.isfinite(w)) for w in self.weights + self.biases):
            raise ValueError("non-finite parameters")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]


def _forward(weights, biases, X):
    """Return (probabilities, activations); activations[i] feeds layer i."""
    acts = [X]
    h = X
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.maximum(h @ W + b, 0.0)
        acts.append(h)
    logits = h @ weights[-1] + biases[-1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    return probs, acts


def _cross_entropy(probs, y_idx):
    n = probs.shape[0]
    return float(-np.mean(np.log(probs[np.arange(n), y_idx] + 1e-300)))


def loss_and_grads(weights, biases, X, y_idx, weight_decay=0.0):
    """Full loss (cross-entropy plus L2 penalty on weights) and its exact
    gradients. The trainer uses weight_decay=0 here and applies decay
    decoupled; the finite-difference harness checks the penalized form."""
    n = X.shape[0]
    probs, acts = _forward(weights, biases, X)
    loss = _cross_entropy(probs, y_idx)
    delta = probs.copy()
    delta[np.arange(n), y_idx] -= 1.0
    delta /= n
    grad_w = [np.empty(0)] * len(weights)
    grad_b = [np.empty(0)] * len(biases)
    for i in range(len(weights) - 1, -1, -1):
        grad_w[i] = acts[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i].T) * (acts[i] > 0)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W)) for W in weights)
        grad_w = [g + weight_decay * W for g, W in zip(grad_w, weights)]
    return loss, grad_w, grad_b


def _init_params(dims: Sequence[int], seed: int):
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def train_mlp(
    train: Sequence[tuple[np.ndarray, str]],
    val: Sequence[tuple[np.ndarray, str]],
    config: MlpConfig,
    classes: Sequence[str] | None = None,
) -> MlpModel:
    """Train by minimizing cross-entropy with decoupled weight decay.

    Stops at max_epochs or when the monitored loss (validation, or training
    when no validation set is given) fails to improve for ``patience``
    consecutive epochs; the best-loss parameters are restored.
    """
    if not train:
        raise TrainingError("empty training set")
    class_list = sorted(classes) if classes is not None else sorted({lab for _, lab in train})
    index = {lab: i for i, lab in enumerate(class_list)}
    present = {lab for _, lab in train}
    missing = [lab for lab in class_list if lab not in present]
    if missing:
        raise TrainingError(f"classes missing from training set: {missing}")

    X = np.asarray([np.asarray(v, dtype=np.float64) for v, _ in train])
    y = np.asarray([index[lab] for _, lab in train], dtype=np.intp)
    if val:
        unseen = sorted({lab for _, lab in val} - set(class_list))
        if unseen:
            raise TrainingError(f"validation classes unseen in training: {unseen}")
        Xv = np.asarray([np.asarray(v, dtype=np.float64) for v, _ in val])
        yv = np.asarray([index[lab] for _, lab in val], dtype=np.intp)
    dims = [X.shape[1], *config.hidden_layers, len(class_list)]
    weights, biases = _init_params(dims, config.init_seed)
    rng = np.random.default_rng(config.init_seed)

    m_w = [np.zeros_like(W) for W in weights]
    v_w = [np.zeros_like(W) for W in weights]
    m_b = [np.zeros_like(b) for b in biases]
    v_b = [np.zeros_like(b) for b in biases]
    t = 0
    lr, wd = config.learning_rate, config.weight_decay

    best_loss = np.inf
    best_params = None
    stale = 0
    n = X.shape[0]
    batch = n if config.batch_size is None else min(config.batch_size, n)

    for epoch in range(config.max_epochs):
        if batch >= n:
            order = np.arange(n)
        else:
            order = rng.permutation(n)
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            loss, grad_w, grad_b = loss_and_grads(weights, biases, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            t += 1
            corr1 = 1.0 - ADAM_BETA1**t
            corr2 = 1.0 - ADAM_BETA2**t
            for i in range(len(weights)):
                m_w[i] = ADAM_BETA1 * m_w[i] + (1 - ADAM_BETA1) * grad_w[i]
                v_w[i] = ADAM_BETA2 * v_w[i] + (1 - ADAM_BETA2) * grad_w[i] ** 2
                step = (m_w[i] / corr1) / (np.sqrt(v_w[i] / corr2) + ADAM_EPS)
                weights[i] = weights[i] - lr * step - lr * wd * weights[i]
                m_b[i] = ADAM_BETA1 * m_b[i] + (1 - ADAM_BETA1) * grad_b[i]
                v_b[i] = ADAM_BETA2 * v_b[i] + (1 - ADAM_BETA2) * grad_b[i] ** 2
                step_b = (m_b[i] / corr1) / (np.sqrt(v_b[i] / corr2) + ADAM_EPS)
                biases[i] = biases[i] - lr * step_b  # no decay on biases

        if val:
            probs, _ = _forward(weights, biases, Xv)
            monitored = _cross_entropy(probs, yv)
        else:
            probs, _ = _forward(weights, biases, X)
            monitored = _cross_entropy(probs, y)
        if not np.isfinite(monitored):
            raise TrainingError(f"non-finite monitored loss at epoch {epoch}")
        if monitored < best_loss:
            best_loss = monitored
            best_params = ([W.copy() for W in weights], [b.copy() for b in biases])
            stale = 0
        else:
            stale += 1
            if stale >= config.early_stop_patience:
                break

    assert best_params is not None
    return MlpModel(weights=best_params[0], biases=best_params[1], classes=class_list)


def predict_mlp(model: MlpModel, x) -> tuple[str, dict[str, float]]:
    """Predicted class and softmax probabilities; ties break to the
    lexicographically-first class."""
    xv = np.asarray(x, dtype=np.float64)
    if xv.shape != (model.input_dim,):
        raise ValueError(f"input shape {xv.shape} does not match model dim {model.input_dim}")
    probs, _ = _forward(model.weights, model.biases, xv[None, :])
    row = probs[0]
    label = model.classes[int(np.argmax(row))]
    return label, {c: float(p) for c, p in zip(model.classes, row)}


def predict_mlp_batch(model: MlpModel, X) -> list[str]:
    Xv = np.asarray(X, dtype=np.float64)
    probs, _ = _forward(model.weights, model.biases, Xv)
    return [model.classes[i] for i in np.argmax(probs, axis=1)]


# -- checkpoint i/o -------------------------------------------------------

_CKPT_MAGIC = b"RMLP"
_CKPT_VERSION = 1


def save_mlp(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4sH", _CKPT_MAGIC, _CKPT_VERSION))
        fh.write(struct.pack("<H", len(model.classes)))
        for c in model.classes:
            raw = c.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        dims = [model.input_dim] + [W.shape[1] for W in model.weights]
        fh.write(struct.pack("<H", len(dims)))
        for d in dims:
            fh.write(struct.pack("<I", d))
        for W, b in zip(model.weights, model.biases):
            fh.write(W.astype("<f8", copy=False).tobytes())
            fh.write(b.astype("<f8", copy=False).tobytes())


def load_mlp(path) -> MlpModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, version = struct.unpack_from("<4sH", blob, 0)
    if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
        raise ValueError(f"not a model checkpoint: magic={magic!r} version={version}")
    pos = 6
    (n_classes,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    classes = []
    for _ in range(n_classes):
        (ln,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        classes.append(blob[pos : pos + ln].decode("utf-8"))
        pos += ln
    (n_dims,) = struct.unpack_from("<H", blob, pos)
    pos += 2
    dims = list(struct.unpack_from(f"<{n_dims}I", blob, pos))
    pos += 4 * n_dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        W = np.frombuffer(blob, dtype="<f8", count=fan_in * fan_out, offset=pos).reshape(
            fan_in, fan_out
        )
        pos += 8 * fan_in * fan_out
        b = np.frombuffer(blob, dtype="<f8", count=fan_out, offset=pos)
        pos += 8 * fan_out
        weights.append(W.copy())
        biases.append(b.copy())
    return MlpModel(weights=weights, biases=biases, classes=classes)


# -- nearest centroid -----------------------------------------------------


def train_centroid(train: Sequence[tuple[np.ndarray, str]]) -> dict[str, np.ndarray]:
    """Per-class mean vectors, keyed by class in canonical order."""
    if not train:
        raise TrainingError("empty training set")
    groups: dict[str, list[np.ndarray]] = {}
    for vec, label in train:
        groups.setdefault(label, []).append(np.asarray(vec, dtype=np.float64))
    return {label: np.mean(groups[label], axis=0) for label in sorted(groups)}


def predict_centroid(centroids: dict[str, np.ndarray], x, kind: DistanceKind) -> str:
    if not centroids:
        raise ValueError("no centroids")
    best_label, best_dist = None, np.inf
    for label in sorted(centroids):
        d = distance(kind, x, centroids[label])
        if d < best_dist:
            best_label, best_dist = label, d
    return best_label
