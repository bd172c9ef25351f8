"""Linear softmax classifier, local SGD and complex symbol packing.

The model is a single dense layer with bias. Its parameters live in one flat
real vector of even length ``2N``; layout is a ``(num_features + 1, num_classes)``
matrix in row-major order (bias in the last row), followed by one zero pad entry
when ``(num_features + 1) * num_classes`` is odd.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax


class ConfigurationError(ValueError):
    """Raised when model, data and configuration dimensions disagree."""


@dataclass(frozen=True)
class LocalDataset:
    """Feature matrix ``(n, num_features)`` with integer labels in ``[0, num_classes)``."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise ConfigurationError("features must be a 2-D array")
        if labels.shape != (features.shape[0],):
            raise ConfigurationError("one label per feature row is required")
        if features.shape[0] == 0:
            raise ConfigurationError("dataset is empty")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ConfigurationError("labels out of range")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    def subset(self, index) -> "LocalDataset":
        return LocalDataset(self.features[index], self.labels[index], self.num_classes)


@dataclass(frozen=True)
class TrainingConfig:
    """Local SGD settings.

    ``eta`` is the base learning rate. The per-round rate follows a step decay
    ``eta * lr_decay ** (t // lr_step)``; with the default ``lr_decay=1`` it is
    constant. ``reg`` adds ``reg / 2 * ||theta||^2`` to every local loss.
    """

    tau: int = 5
    eta: float = 0.05
    batch_size: int = 100
    reg: float = 0.0
    lr_decay: float = 1.0
    lr_step: int = 1

    def __post_init__(self):
        if self.tau < 1:
            raise ConfigurationError("tau must be >= 1")
        if self.eta < 0:
            raise ConfigurationError("eta must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.reg < 0:
            raise ConfigurationError("reg must be non-negative")
        if self.lr_step < 1:
            raise ConfigurationError("lr_step must be >= 1")

    def eta_at(self, t: int) -> float:
        return self.eta * self.lr_decay ** (t // self.lr_step)


def model_dim(num_features: int, num_classes: int) -> int:
    """Length ``2N`` of the parameter vector, padded to be even."""
    d = (num_features + 1) * num_classes
    return d + d % 2


def zero_model(num_features: int, num_classes: int) -> np.ndarray:
    return np.zeros(model_dim(num_features, num_classes))


def _weights(theta, num_features, num_classes):
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model_dim(num_features, num_classes),):
        raise ConfigurationError(
            f"model has length {theta.shape}, expected {model_dim(num_features, num_classes)} "
            f"for {num_features} features and {num_classes} classes"
        )
    d = (num_features + 1) * num_classes
    return theta[:d].reshape(num_features + 1, num_classes)


def _flatten(grad_w, dim):
    out = np.zeros(dim)
    out[: grad_w.size] = grad_w.ravel()
    return out


def logits(theta, features, num_classes) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    w = _weights(theta, features.shape[1], num_classes)
    return features @ w[:-1] + w[-1]


def predict(theta, dataset: LocalDataset) -> np.ndarray:
    return np.argmax(logits(theta, dataset.features, dataset.num_classes), axis=1)


def loss(theta, dataset: LocalDataset, reg: float = 0.0) -> float:
    """Mean softmax cross-entropy over ``dataset`` plus optional ridge penalty."""
    z = logits(theta, dataset.features, dataset.num_classes)
    ce = logsumexp(z, axis=1) - z[np.arange(len(dataset)), dataset.labels]
    value = float(np.mean(ce))
    if reg:
        value += 0.5 * reg * float(np.dot(theta, theta))
    return value


def gradient(theta, batch: LocalDataset, reg: float = 0.0) -> np.ndarray:
    """Exact gradient of :func:`loss` with respect to ``theta``."""
    theta = np.asarray(theta, dtype=np.float64)
    z = logits(theta, batch.features, batch.num_classes)
    p = softmax(z, axis=1)
    p[np.arange(len(batch)), batch.labels] -= 1.0
    p /= len(batch)
    grad_w = np.vstack([batch.features.T @ p, p.sum(axis=0)])
    g = _flatten(grad_w, theta.size)
    if reg:
        g += reg * theta
    return g


def hessian_vector_product(theta, dataset: LocalDataset, v, reg: float = 0.0) -> np.ndarray:
    """Analytic Hessian of :func:`loss` applied to ``v``."""
    theta = np.asarray(theta, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x = dataset.features
    p = softmax(logits(theta, x, dataset.num_classes), axis=1)
    vw = _weights(v, dataset.num_features, dataset.num_classes)
    dz = x @ vw[:-1] + vw[-1]
    hz = p * dz - p * np.sum(p * dz, axis=1, keepdims=True)
    hz /= len(dataset)
    out = _flatten(np.vstack([x.T @ hz, hz.sum(axis=0)]), theta.size)
    if reg:
        out += reg * v
    return out


class MinibatchSampler:
    """Uniform mini-batches without replacement, reshuffled once a pass is exhausted."""

    def __init__(self, n: int, batch_size: int, rng):
        if batch_size > n:
            raise ConfigurationError(f"batch_size {batch_size} exceeds dataset size {n}")
        self.n = n
        self.batch_size = batch_size
        self.rng = np.random.default_rng(rng)
        self._perm = self.rng.permutation(n)
        self._pos = 0

    def next(self) -> np.ndarray:
        if self._pos + self.batch_size > self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        # sorted so that a full batch reproduces the dataset order exactly
        return np.sort(batch)


def local_train(theta, dataset: LocalDataset, cfg: TrainingConfig, rng_seed, eta=None) -> np.ndarray:
    """Run ``cfg.tau`` SGD steps from ``theta`` and return the final local model.

    ``eta`` overrides ``cfg.eta`` (the orchestrator passes the scheduled rate of
    the current global round). Deterministic given ``rng_seed``.
    """
    lr = cfg.eta if eta is None else eta
    sampler = MinibatchSampler(len(dataset), cfg.batch_size, rng_seed)
    current = np.array(theta, dtype=np.float64)
    _weights(current, dataset.num_features, dataset.num_classes)
    for _ in range(cfg.tau):
        batch = dataset.subset(sampler.next())
        current = current - lr * gradient(current, batch, cfg.reg)
    return current


def compute_update(model_before, model_after) -> np.ndarray:
    before = np.asarray(model_before, dtype=np.float64)
    after = np.asarray(model_after, dtype=np.float64)
    if before.shape != after.shape:
        raise ConfigurationError(f"shape mismatch {before.shape} vs {after.shape}")
    return after - before


def pack_complex(update) -> np.ndarray:
    """Map a length-``2N`` real vector to ``N`` complex symbols ``u[n] + j u[n+N]``."""
    update = np.asarray(update, dtype=np.float64)
    if update.ndim != 1 or update.size % 2:
        raise ConfigurationError("update must be a 1-D vector of even length")
    n = update.size // 2
    signal = np.empty(n, dtype=np.complex128)
    signal.real = update[:n]
    signal.imag = update[n:]
    return signal


def unpack_complex(signal) -> np.ndarray:
    signal = np.asarray(signal)
    return np.concatenate([signal.real, signal.imag]).astype(np.float64)
