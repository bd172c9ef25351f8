"""Dataset loading (IDX files, synthetic Gaussian blobs) and non-i.i.d. partitioning."""

from __future__ import annotations

import gzip
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import LocalDataset

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IDXFormatError(ValueError):
    pass


def _open(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, expected_magic=None) -> np.ndarray:
    """Read an unsigned-byte IDX file into an array of its declared shape."""
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 4:
        raise IDXFormatError(f"{path}: truncated header")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise IDXFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 8 != 0x08:
        raise IDXFormatError(f"{path}: unsupported IDX type 0x{magic:08x}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IDXFormatError(f"{path}: truncated header")
    shape = struct.unpack(f">{ndim}I", raw[4:header])
    size = math.prod(shape)
    if len(raw) - header < size:
        raise IDXFormatError(f"{path}: truncated body ({len(raw) - header} of {size} bytes)")
    if len(raw) - header > size:
        raise IDXFormatError(f"{path}: {len(raw) - header - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(shape)


def write_idx(path, array) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = (0x08 << 8) | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def load_idx(images_path, labels_path, num_classes: int = 10) -> LocalDataset:
    """Load an MNIST-style image/label pair. Pixels are scaled to [0, 1]."""
    images = read_idx(images_path, IMAGES_MAGIC)
    labels = read_idx(labels_path, LABELS_MAGIC)
    if images.ndim != 3 or labels.ndim != 1:
        raise IDXFormatError("images must be 3-D and labels 1-D")
    if images.shape[0] != labels.shape[0]:
        raise IDXFormatError(f"count mismatch: {images.shape[0]} images, {labels.shape[0]} labels")
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return LocalDataset(features, labels.astype(np.int64), num_classes)


def synth_dataset(num_classes, num_features, samples_per_class, seed) -> LocalDataset:
    """Unit-covariance Gaussian blobs with class means on a sphere of radius 3."""
    if min(num_classes, num_features, samples_per_class) < 1:
        raise ValueError("all sizes must be positive")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((num_classes, num_features))
    means *= 3.0 / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    features = means[labels] + rng.standard_normal((labels.size, num_features))
    order = rng.permutation(labels.size)
    return LocalDataset(features[order], labels[order], num_classes)


def split_per_class(dataset: LocalDataset, test_per_class: int, seed):
    """Stratified split returning ``(train, test)`` with ``test_per_class`` test samples per class."""
    rng = np.random.default_rng(seed)
    test_idx = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        if idx.size <= test_per_class:
            raise ValueError(f"class {c} has only {idx.size} samples")
        test_idx.append(rng.choice(idx, size=test_per_class, replace=False))
    test_idx = np.sort(np.concatenate(test_idx))
    mask = np.ones(len(dataset), dtype=bool)
    mask[test_idx] = False
    return dataset.subset(np.flatnonzero(mask)), dataset.subset(test_idx)


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a corpus across ``num_users`` users.

    ``mode`` is ``"classes_per_user"`` (uses ``k``) or ``"dirichlet"`` (uses ``beta``).
    """

    mode: str = "classes_per_user"
    num_users: int = 40
    samples_per_user: int = 1250
    k: int = 1
    beta: float = 0.5
    seed: int | None = None

    def __post_init__(self):
        if self.mode not in ("classes_per_user", "dirichlet"):
            raise ValueError(f"unknown partition mode {self.mode!r}")
        if self.num_users < 1 or self.samples_per_user < 1:
            raise ValueError("num_users and samples_per_user must be positive")
        if self.mode == "classes_per_user" and self.k < 1:
            raise ValueError("k must be positive")
        if self.mode == "dirichlet" and not self.beta > 0:
            raise ValueError("beta must be positive")


def largest_remainder(proportions, total: int) -> np.ndarray:
    """Round ``proportions * total`` to integers that sum exactly to ``total``."""
    scaled = np.asarray(proportions, dtype=np.float64) * total
    counts = np.floor(scaled).astype(np.int64)
    short = total - counts.sum()
    if short > 0:
        # stable sort keeps lower class indices first among equal remainders
        order = np.argsort(-(scaled - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def user_class_counts(spec: PartitionSpec, num_classes: int, rng) -> np.ndarray:
    """Per-user, per-class sample counts, shape ``(num_users, num_classes)``."""
    counts = np.zeros((spec.num_users, num_classes), dtype=np.int64)
    if spec.mode == "classes_per_user":
        if spec.k > num_classes:
            raise ValueError(f"k={spec.k} exceeds {num_classes} classes")
        perm = rng.permutation(num_classes)
        base, extra = divmod(spec.samples_per_user, spec.k)
        for m in range(spec.num_users):
            for j in range(spec.k):
                counts[m, perm[(m * spec.k + j) % num_classes]] = base + (j < extra)
    else:
        for m in range(spec.num_users):
            p = rng.dirichlet(np.full(num_classes, spec.beta))
            counts[m] = largest_remainder(p, spec.samples_per_user)
    return counts


def partition(dataset: LocalDataset, spec: PartitionSpec) -> list[LocalDataset]:
    """Split ``dataset`` into ``spec.num_users`` non-i.i.d. local datasets.

    Samples are drawn without replacement from per-class pools; once a class
    pool runs dry the remaining draws for that class are with replacement.
    """
    total = spec.num_users * spec.samples_per_user
    if total > len(dataset):
        raise ValueError(f"need {total} samples, dataset has {len(dataset)}")
    rng = np.random.default_rng(spec.seed)
    counts = user_class_counts(spec, dataset.num_classes, rng)
    members = [np.flatnonzero(dataset.labels == c) for c in range(dataset.num_classes)]
    pools = [rng.permutation(idx) for idx in members]
    cursor = np.zeros(dataset.num_classes, dtype=np.int64)

    users = []
    for m in range(spec.num_users):
        idx = []
        for c in np.flatnonzero(counts[m]):
            need = counts[m, c]
            if members[c].size == 0:
                raise ValueError(f"class {c} has no samples")
            take = pools[c][cursor[c] : cursor[c] + need]
            cursor[c] += take.size
            idx.append(take)
            if take.size < need:
                idx.append(rng.choice(members[c], size=need - take.size, replace=True))
        users.append(dataset.subset(np.sort(np.concatenate(idx))))
    return users


def label_distribution(dataset: LocalDataset, num_classes: int | None = None) -> np.ndarray:
    num_classes = dataset.num_classes if num_classes is None else num_classes
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.labels.max() >= num_classes:
        raise ValueError("label exceeds num_classes")
    return np.bincount(dataset.labels, minlength=num_classes) / len(dataset)
