"""Dataset loading/synthesis and non-iid partitioning across clients.

Training data lives in one global feature/label array pair; a partition maps
every client id to its slice of sample indices.  Heterogeneity is produced
by splitting each class across clients with Dirichlet-distributed
proportions: small concentrations pile a class onto few clients.  The test
split stays global and un-partitioned.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, replace

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

TEST_FRACTION = 5  # one in five synthetic samples held out per class


class IdxFormatError(ValueError):
    """Malformed IDX file; carries the byte offset of the failure."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class FederatedDataset:
    """Global train arrays, optional client partition, optional test split.

    features are float64 in [0, 1] with one row per sample; partition cells
    are disjoint and cover exactly the train rows.
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: int
    partition: dict[int, np.ndarray] | None = None
    test_features: np.ndarray | None = None
    test_labels: np.ndarray | None = None


@dataclass(frozen=True)
class PartitionSpec:
    n_clients: int
    alpha: float
    rng: np.random.Generator

    def __post_init__(self):
        if self.n_clients < 1:
            raise ValueError(f"n_clients must be >= 1, got {self.n_clients}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to total, closest to proportions*total."""
    quotas = proportions * total
    counts = np.floor(quotas).astype(np.int64)
    missing = total - int(counts.sum())
    if missing:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:missing]] += 1
    return counts


def dirichlet_partition(labels, spec: PartitionSpec) -> dict[int, np.ndarray]:
    """Split sample indices across clients with skewed class proportions.

    For every class, client shares are drawn from a symmetric Dirichlet with
    concentration alpha and the class indices are divided by those shares
    using largest-remainder rounding.  Any client left empty afterwards
    steals one sample from the currently largest client, so every client
    owns at least one sample.  Deterministic given the stream.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty label set")
    if labels.size < spec.n_clients:
        raise ValueError(f"need >= {spec.n_clients} samples to cover every client, got {labels.size}")
    n = spec.n_clients
    cells: list[list[int]] = [[] for _ in range(n)]
    for cls in np.unique(labels):
        idx = spec.rng.permutation(np.flatnonzero(labels == cls))
        shares = spec.rng.dirichlet(np.full(n, spec.alpha))
        counts = _largest_remainder(shares, idx.size)
        for client, chunk in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            cells[client].extend(int(i) for i in chunk)
    for client in range(n):
        if not cells[client]:
            donor = max(range(n), key=lambda i: (len(cells[i]), -i))
            cells[client].append(cells[donor].pop())
    return {i: np.asarray(sorted(cells[i]), dtype=np.int64) for i in range(n)}


def partition_class_counts(dataset: FederatedDataset) -> np.ndarray:
    """Per-client class histogram, shape (n_clients, n_classes)."""
    if dataset.partition is None:
        raise ValueError("dataset has no partition")
    counts = np.zeros((len(dataset.partition), dataset.n_classes), dtype=np.int64)
    for client, idx in dataset.partition.items():
        for cls, cnt in zip(*np.unique(dataset.labels[idx], return_counts=True)):
            counts[client, int(cls)] = int(cnt)
    return counts


def write_partition_stats(dataset: FederatedDataset, path) -> None:
    """Export the partition as CSV rows (client_id, class_id, count)."""
    counts = partition_class_counts(dataset)
    lines = ["client_id,class_id,count"]
    for client in range(counts.shape[0]):
        for cls in range(counts.shape[1]):
            lines.append(f"{client},{cls},{counts[client, cls]}")
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def _read_idx(path, expected_magic: int, n_dims: int) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except FileNotFoundError:
        raise FileNotFoundError(f"dataset file not found: {path}") from None
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: truncated header", len(raw))
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x}, expected 0x{expected_magic:08x}", 0)
    header = 4 + 4 * n_dims
    if len(raw) < header:
        raise IdxFormatError(f"{path}: truncated dimension header", len(raw))
    dims = struct.unpack(f">{n_dims}I", raw[4:header])
    payload = int(np.prod(dims))
    if len(raw) != header + payload:
        raise IdxFormatError(
            f"{path}: payload holds {len(raw) - header} bytes, dimensions {dims} require {payload}",
            min(len(raw), header + payload),
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> FederatedDataset:
    """Load an IDX image/label file pair into an unpartitioned dataset.

    Pixels are scaled to [0, 1] by dividing the raw bytes by 255.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError(
            f"{images_path} holds {images.shape[0]} images but {labels_path} holds {labels.shape[0]} labels", 4
        )
    features = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    labels = labels.astype(np.int64)
    return FederatedDataset(features, labels, n_classes=int(labels.max()) + 1)


def attach_test(train: FederatedDataset, test: FederatedDataset) -> FederatedDataset:
    """Attach a separately loaded split as the global test set."""
    return replace(train, test_features=test.features, test_labels=test.labels)


def synth_classification(
    n: int, n_features: int, n_classes: int, margin: float, rng: np.random.Generator
) -> FederatedDataset:
    """Gaussian class clusters with pairwise center distance >= margin.

    Labels are balanced up to one sample, features are min-max scaled to
    [0, 1], and a stratified 20% test split is held out globally.  Same
    stream, same dataset, bit for bit.
    """
    if not n >= n_classes >= 2:
        raise ValueError(f"need n >= n_classes >= 2, got n={n}, n_classes={n_classes}")
    centers = rng.standard_normal((n_classes, n_features))
    gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
    min_gap = gaps[~np.eye(n_classes, dtype=bool)].min()
    while min_gap == 0.0:  # measure-zero redraw
        centers = rng.standard_normal((n_classes, n_features))
        gaps = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=-1)
        min_gap = gaps[~np.eye(n_classes, dtype=bool)].min()
    centers *= margin / min_gap
    counts = [n // n_classes + (1 if c < n % n_classes else 0) for c in range(n_classes)]
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), counts)
    features = centers[labels] + rng.standard_normal((n, n_features))
    lo, hi = features.min(axis=0), features.max(axis=0)
    features = (features - lo) / np.where(hi > lo, hi - lo, 1.0)
    test_mask = np.zeros(n, dtype=bool)
    for cls in range(n_classes):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        test_mask[idx[: idx.size // TEST_FRACTION]] = True
    train_idx = rng.permutation(np.flatnonzero(~test_mask))
    test_idx = rng.permutation(np.flatnonzero(test_mask))
    return FederatedDataset(
        features=features[train_idx],
        labels=labels[train_idx],
        n_classes=n_classes,
        test_features=features[test_idx],
        test_labels=labels[test_idx],
    )
