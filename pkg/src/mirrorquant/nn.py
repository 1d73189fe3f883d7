"""A small dense ReLU network with hand-written backpropagation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np


class ShapeError(ValueError):
    pass


@dataclass
class MlpModel:
    """Dense layers ``a_{l+1} = relu(a_l W_l^T + b_l)``; the last layer is linear.

    ``weights[l]`` has shape ``(out, in)``.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise ShapeError(f"layer {l}: weight {W.shape} and bias {b.shape} do not match")
            if l and W.shape[1] != self.weights[l - 1].shape[0]:
                raise ShapeError(f"layer {l} expects {W.shape[1]} inputs, "
                                 f"previous layer gives {self.weights[l - 1].shape[0]}")

    @property
    def dims(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def n_params(self):
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def copy(self):
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def to_vector(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)

    def with_vector(self, vec):
        """New model of the same shape holding the entries of ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ShapeError(f"expected {self.n_params} parameters, got {vec.shape}")
        weights, biases, i = [], [], 0
        for W, b in zip(self.weights, self.biases):
            weights.append(vec[i:i + W.size].reshape(W.shape))
            i += W.size
            biases.append(vec[i:i + b.size].copy())
            i += b.size
        return MlpModel(weights, biases)


def init_mlp(dims: Sequence[int], rng: np.random.Generator, scale=None) -> MlpModel:
    """He-style init, or uniform ``(-scale, scale)`` when ``scale`` is given."""
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        if scale is None:
            W = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_out, n_in))
            b = np.zeros(n_out)
        else:
            W = rng.uniform(-scale, scale, size=(n_out, n_in))
            b = rng.uniform(-scale, scale, size=n_out)
        weights.append(W)
        biases.append(b)
    return MlpModel(weights, biases)


@dataclass
class Cache:
    inputs: List[np.ndarray]  # input to each layer
    pre: List[np.ndarray]  # pre-activations of each layer


@dataclass
class Gradients:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def to_vector(self):
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts += [W.ravel(), b]
        return np.concatenate(parts)


def forward(model: MlpModel, batch) -> Tuple[np.ndarray, Cache]:
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != model.dims[0]:
        raise ShapeError(f"batch shape {a.shape} does not match input dim {model.dims[0]}")
    inputs, pre = [], []
    last = len(model.weights) - 1
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ W.T + b
        pre.append(z)
        a = z if l == last else np.maximum(z, 0.0)
    return a, Cache(inputs, pre)


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(z), axis=1))
    log_p = z - log_norm[:, None]
    rows = np.arange(n)
    loss = -float(np.mean(log_p[rows, labels]))
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / n


def backward(model: MlpModel, cache: Cache, dlogits) -> Gradients:
    if len(cache.pre) != len(model.weights):
        raise ShapeError("cache does not come from this model")
    delta = np.asarray(dlogits, dtype=np.float64)
    if delta.shape != cache.pre[-1].shape:
        raise ShapeError(f"dlogits {delta.shape} vs cached logits {cache.pre[-1].shape}")
    gW = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    for l in range(len(model.weights) - 1, -1, -1):
        if cache.inputs[l].shape[1] != model.weights[l].shape[1]:
            raise ShapeError(f"stale cache at layer {l}")
        gW[l] = delta.T @ cache.inputs[l]
        gb[l] = delta.sum(axis=0)
        if l:
            delta = (delta @ model.weights[l]) * (cache.pre[l - 1] > 0.0)
    return Gradients(gW, gb)


def loss_and_grad(model: MlpModel, X, y):
    logits, cache = forward(model, X)
    loss, dlogits = cross_entropy(logits, y)
    return loss, backward(model, cache, dlogits), logits


def accuracy(model: MlpModel, X, y):
    logits, _ = forward(model, X)
    return float(np.mean(np.argmax(logits, axis=1) == y))


# -- data ---------------------------------------------------------------------


DATASET_KINDS = ("xor-blobs", "two-moons", "gaussian-blobs")


@dataclass
class Dataset:
    kind: str
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    classes: int
    seed: int


def generate_dataset(kind="xor-blobs", n=2000, noise=0.25, seed=0,
                     classes=None, test_fraction=0.2) -> Dataset:
    """Deterministic synthetic 2-D classification data with an 80/20 split."""
    if n < 10:
        raise ValueError("need n >= 10")
    if kind not in DATASET_KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {DATASET_KINDS}")
    rng = np.random.default_rng(seed)
    if kind == "xor-blobs":
        classes = 2
        corner = rng.integers(0, 4, size=n)
        signs = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=np.float64)
        X = signs[corner] + noise * rng.standard_normal((n, 2))
        y = (corner >= 2).astype(np.int64)
    elif kind == "two-moons":
        classes = 2
        y = rng.integers(0, 2, size=n)
        t = rng.uniform(0.0, np.pi, size=n)
        X = np.where(y[:, None] == 0,
                     np.stack([np.cos(t), np.sin(t)], axis=1),
                     np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1))
        X = X + noise * rng.standard_normal((n, 2))
    else:
        classes = classes or 3
        y = rng.integers(0, classes, size=n)
        angles = 2.0 * np.pi * np.arange(classes) / classes
        centres = 2.0 * np.stack([np.cos(angles), np.sin(angles)], axis=1)
        X = centres[y] + noise * rng.standard_normal((n, 2))
    perm = rng.permutation(n)
    X, y = X[perm], y[perm]
    n_test = int(round(test_fraction * n))
    return Dataset(kind, X[n_test:], y[n_test:], X[:n_test], y[:n_test], classes, seed)
