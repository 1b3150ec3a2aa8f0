"""Datasets and client partitioning.

Covers the MNIST IDX binary format (with transparent gzip), a synthetic
Gaussian-blob generator for fast tests, per-class Dirichlet partitioning of a
dataset across clients, and imbalanced binary subset construction.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    CapacityError,
    ConfigError,
    EmptyDatasetError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    """Feature matrix plus integer labels.

    features is (n, d) float64 with image pixels scaled to [0, 1];
    labels is (n,) int64 with values in [0, num_classes).
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self, indices=None) -> np.ndarray:
        labels = self.labels if indices is None else self.labels[indices]
        return np.bincount(labels, minlength=self.num_classes)


@dataclass
class DirichletSpec:
    """Dirichlet(alpha) label-skew partition over num_clients clients."""

    alpha: float
    num_clients: int
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ConfigError(f"alpha must be positive, got {self.alpha}")
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")


@dataclass
class PartitionPlan:
    """Disjoint, exhaustive assignment of dataset rows to clients."""

    client_indices: list[np.ndarray]

    @property
    def num_clients(self) -> int:
        return len(self.client_indices)

    def empty_clients(self) -> list[int]:
        return [cid for cid, idx in enumerate(self.client_indices) if len(idx) == 0]


@dataclass
class BinarySubsetSpec:
    """Imbalanced two-class subset: n_pos positives, ratio * n_pos negatives."""

    positive_class: int
    negative_class: int
    n_pos: int
    ratio: float
    seed: int = 0

    def __post_init__(self):
        if self.positive_class == self.negative_class:
            raise ConfigError("positive and negative source classes must differ")
        if self.ratio < 1:
            raise ConfigError(f"imbalance ratio must be >= 1, got {self.ratio}")
        if self.n_pos < 1:
            raise ConfigError(f"n_pos must be >= 1, got {self.n_pos}")


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count: int, offset: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxTruncatedError(
            f"{what}: expected {count} bytes at offset {offset}, got {len(data)}"
        )
    return data


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Parse an MNIST-style IDX image/label file pair.

    Big-endian headers: images are magic 0x00000803, count, rows, cols and
    then count*rows*cols unsigned bytes; labels are magic 0x00000801, count,
    then count bytes. Pixels are scaled by 1/255. Files ending in .gz are
    decompressed transparently.
    """
    with _open_maybe_gzip(images_path) as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, f"{images_path}"))
        if magic != IDX_IMAGE_MAGIC:
            raise IdxMagicError(
                f"{images_path}: magic 0x{magic:08x} at offset 0, "
                f"expected image magic 0x{IDX_IMAGE_MAGIC:08x}"
            )
        n_images, rows, cols = struct.unpack(">iii", _read_exact(f, 12, 4, f"{images_path}"))
        pixel_bytes = _read_exact(f, n_images * rows * cols, 16, f"{images_path}")
    with _open_maybe_gzip(labels_path) as f:
        (magic,) = struct.unpack(">i", _read_exact(f, 4, 0, f"{labels_path}"))
        if magic != IDX_LABEL_MAGIC:
            raise IdxMagicError(
                f"{labels_path}: magic 0x{magic:08x} at offset 0, "
                f"expected label magic 0x{IDX_LABEL_MAGIC:08x}"
            )
        (n_labels,) = struct.unpack(">i", _read_exact(f, 4, 4, f"{labels_path}"))
        label_bytes = _read_exact(f, n_labels, 8, f"{labels_path}")

    if n_images != n_labels:
        raise IdxCountMismatchError(
            f"{n_images} images but {n_labels} labels "
            f"({images_path} offset 4 vs {labels_path} offset 4)"
        )
    pixels = np.frombuffer(pixel_bytes, dtype=np.uint8).reshape(n_images, rows * cols)
    features = pixels.astype(np.float64) / 255.0
    labels = np.frombuffer(label_bytes, dtype=np.uint8).astype(np.int64)
    return Dataset(features=features, labels=labels, num_classes=10)


def load_mnist(data_dir, train: bool = True) -> Dataset:
    """Load the train or test split from a directory of IDX files (.gz or plain)."""
    data_dir = Path(data_dir)
    stem = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte") if train else (
        "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")
    paths = []
    for name in stem:
        plain = data_dir / name
        gz = data_dir / (name + ".gz")
        if plain.exists():
            paths.append(plain)
        elif gz.exists():
            paths.append(gz)
        else:
            raise EmptyDatasetError(f"no {name}[.gz] under {data_dir}")
    return load_mnist_idx(paths[0], paths[1])


def gen_synthetic(per_class_counts, dim: int, spread: float, seed) -> Dataset:
    """Gaussian blobs: class k is centered at unit basis vector e_{k mod dim}.

    Samples are clamped to [0, 1]; spread 0 gives exact basis vectors. Fully
    determined by the seed.
    """
    counts = [int(c) for c in per_class_counts]
    if any(c < 0 for c in counts):
        raise ConfigError(f"per-class counts must be non-negative, got {counts}")
    if sum(counts) == 0:
        raise EmptyDatasetError("all per-class counts are zero")
    if dim < 1:
        raise ConfigError(f"dim must be >= 1, got {dim}")

    rng = np.random.default_rng(seed)
    feats = []
    labels = []
    for k, c in enumerate(counts):
        if c == 0:
            continue
        center = np.zeros(dim)
        center[k % dim] = 1.0
        block = center + rng.normal(0.0, spread, size=(c, dim)) if spread > 0 else np.tile(center, (c, 1))
        feats.append(np.clip(block, 0.0, 1.0))
        labels.append(np.full(c, k, dtype=np.int64))
    return Dataset(
        features=np.concatenate(feats, axis=0),
        labels=np.concatenate(labels),
        num_classes=len(counts),
    )


def largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Round proportions * total to integers that sum exactly to total.

    Floor first, then hand out the remainder to the largest fractional parts
    (ties go to the lower index).
    """
    raw = proportions * total
    base = np.floor(raw).astype(np.int64)
    short = total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    return base


def dirichlet_partition(dataset: Dataset, spec: DirichletSpec) -> PartitionPlan:
    """Assign rows to clients with per-class Dirichlet(alpha) proportions.

    For each class independently: draw client proportions as normalized
    Gamma(alpha) variates, convert to integer quotas by largest-remainder
    rounding, then deal out that class's (seed-shuffled) row indices. Smaller
    alpha concentrates each class on fewer clients. Pure function of
    (dataset, spec.seed).
    """
    if len(dataset) == 0:
        raise EmptyDatasetError("cannot partition an empty dataset")
    rng = np.random.default_rng(spec.seed)
    p = spec.num_clients
    buckets: list[list[np.ndarray]] = [[] for _ in range(p)]
    for k in range(dataset.num_classes):
        class_rows = np.flatnonzero(dataset.labels == k)
        draws = rng.gamma(spec.alpha, 1.0, size=p)
        rng.shuffle(class_rows)
        if len(class_rows) == 0:
            continue
        total = draws.sum()
        if not np.isfinite(total) or total <= 0.0:
            # All Gamma draws underflowed (tiny alpha): the limiting Dirichlet
            # puts everything on one client.
            proportions = np.zeros(p)
            proportions[rng.integers(p)] = 1.0
        else:
            proportions = draws / total
        quotas = largest_remainder(proportions, len(class_rows))
        stop = np.cumsum(quotas)
        start = stop - quotas
        for cid in range(p):
            buckets[cid].append(class_rows[start[cid]:stop[cid]])
    client_indices = [
        np.sort(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
        for parts in buckets
    ]
    return PartitionPlan(client_indices=client_indices)


def binary_imbalanced_subset(dataset: Dataset, spec: BinarySubsetSpec) -> Dataset:
    """Two-class subset with labels 1 (positive) and 0 (negative).

    Takes n_pos samples of the positive source class and round(ratio * n_pos)
    of the negative one, chosen by seeded shuffle, and shuffles the result.
    """
    n_neg = int(round(spec.ratio * spec.n_pos))
    pos_rows = np.flatnonzero(dataset.labels == spec.positive_class)
    neg_rows = np.flatnonzero(dataset.labels == spec.negative_class)
    if len(pos_rows) < spec.n_pos or len(neg_rows) < n_neg:
        raise CapacityError(
            f"need {spec.n_pos} of class {spec.positive_class} and {n_neg} of "
            f"class {spec.negative_class}, have {len(pos_rows)} and {len(neg_rows)}"
        )
    rng = np.random.default_rng(spec.seed)
    pos_pick = rng.permutation(pos_rows)[: spec.n_pos]
    neg_pick = rng.permutation(neg_rows)[:n_neg]
    rows = np.concatenate([neg_pick, pos_pick])
    labels = np.concatenate([
        np.zeros(n_neg, dtype=np.int64),
        np.ones(spec.n_pos, dtype=np.int64),
    ])
    order = rng.permutation(len(rows))
    return Dataset(
        features=dataset.features[rows[order]],
        labels=labels[order],
        num_classes=2,
    )
