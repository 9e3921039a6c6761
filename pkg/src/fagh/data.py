"""Dataset construction and non-IID client partitioning.

Two partition schemes cover the usual heterogeneity regimes:

* Dirichlet: per class, client proportions are drawn from Dir_K(alpha)
  (normalized Gamma draws) and samples are allocated by largest-remainder
  rounding, so each class's allocations sum exactly to its sample count.
  Small alpha gives most clients zero samples of most classes.
* Shards: samples are label-sorted, cut into equal contiguous shards, and a
  fixed number of shards is dealt to each client (pathological label skew).

Both are pure functions of (dataset, parameters, seed).
"""

import struct
from dataclasses import dataclass

import numpy as np

from .models import Batch
from .rng import stream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Raised when an IDX file violates the binary format."""


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")
        # Batch performs the shape/range validation; reuse its frozen arrays
        b = Batch(features=self.features, labels=self.labels)
        object.__setattr__(self, "features", b.features)
        object.__setattr__(self, "labels", b.labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def to_batch(self, indices=None) -> Batch:
        if indices is None:
            return Batch(features=self.features, labels=self.labels)
        idx = np.asarray(indices, dtype=np.int64)
        return Batch(features=self.features[idx], labels=self.labels[idx])


@dataclass(frozen=True)
class DataPartition:
    """Per-client sample indices over one dataset. Index lists are sorted,
    disjoint, and may be empty (heavily skewed Dirichlet draws leave some
    clients with nothing)."""

    assignments: tuple
    num_source_samples: int

    def __post_init__(self):
        cleaned = []
        for cid, idx in enumerate(self.assignments):
            arr = np.asarray(idx, dtype=np.int64).copy()
            if arr.ndim != 1:
                raise ValueError(f"client {cid}: indices must be 1-D")
            if arr.size:
                if arr.min() < 0 or arr.max() >= self.num_source_samples:
                    raise ValueError(f"client {cid}: index out of range")
                if np.any(np.diff(arr) <= 0):
                    raise ValueError(f"client {cid}: indices must be sorted and unique")
            arr.flags.writeable = False
            cleaned.append(arr)
        merged = np.concatenate(cleaned) if cleaned else np.empty(0, dtype=np.int64)
        if np.unique(merged).size != merged.size:
            raise ValueError("client index lists overlap")
        object.__setattr__(self, "assignments", tuple(cleaned))

    @property
    def num_clients(self) -> int:
        return len(self.assignments)

    @property
    def counts(self) -> np.ndarray:
        return np.array([idx.size for idx in self.assignments], dtype=np.int64)


def synth_classification(seed: int, n: int, input_dim: int, num_classes: int,
                         separation: float, split: str = "train") -> Dataset:
    """Gaussian class clusters with unit-variance noise.

    Class mean directions are drawn once from the seed (shared between the
    train and test splits) and scaled to norm ``separation``, so separation
    measures each mean's distance from the origin in noise-sigma units.
    Per-split noise and label order come from a split-specific stream.
    Labels are balanced to within one sample per class.
    """
    if num_classes < 2 or n < num_classes:
        raise ValueError("need n >= num_classes >= 2")
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    if separation < 0:
        raise ValueError("separation must be >= 0")
    directions = stream(seed, "synth-means").normal(size=(num_classes, input_dim))
    norms = np.linalg.norm(directions, axis=1, keepdims=True)
    means = separation * directions / norms
    rng = stream(seed, f"synth-{split}")
    per_class = np.full(num_classes, n // num_classes, dtype=np.int64)
    per_class[: n % num_classes] += 1
    labels = np.repeat(np.arange(num_classes), per_class)
    labels = labels[rng.permutation(n)]
    features = means[labels] + rng.normal(size=(n, input_dim))
    return Dataset(features=features, labels=labels, split=split)


def _read_idx_header(buf: bytes, path, expected_magic: int, words: int) -> tuple:
    if len(buf) < 4 * words:
        raise IdxFormatError(f"{path}: truncated header")
    values = struct.unpack(f">{words}I", buf[: 4 * words])
    if values[0] != expected_magic:
        raise IdxFormatError(f"{path}: bad magic 0x{values[0]:08x}, "
                             f"expected 0x{expected_magic:08x}")
    return values


def load_idx(images_path, labels_path, split: str = "train") -> Dataset:
    """Load an IDX image/label file pair (big-endian, MNIST-family layout).

    Pixel bytes are scaled to [0, 1] by dividing by 255; labels pass through
    unchanged. Image and label counts must agree.
    """
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()

    _, n_img, rows, cols = _read_idx_header(img_buf, images_path, IDX_IMAGES_MAGIC, 4)
    payload = img_buf[16:]
    if len(payload) != n_img * rows * cols:
        raise IdxFormatError(f"{images_path}: expected {n_img * rows * cols} "
                             f"pixel bytes, found {len(payload)}")

    _, n_lab = _read_idx_header(lab_buf, labels_path, IDX_LABELS_MAGIC, 2)
    lab_payload = lab_buf[8:]
    if len(lab_payload) != n_lab:
        raise IdxFormatError(f"{labels_path}: expected {n_lab} label bytes, "
                             f"found {len(lab_payload)}")
    if n_img != n_lab:
        raise IdxFormatError(f"{n_img} images but {n_lab} labels")

    features = np.frombuffer(payload, dtype=np.uint8).reshape(n_img, rows * cols)
    labels = np.frombuffer(lab_payload, dtype=np.uint8).astype(np.int64)
    return Dataset(features=features.astype(np.float64) / 255.0,
                   labels=labels, split=split)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer allocation of ``total`` by proportion, conserving the sum
    exactly. Remainders tie-break toward the lower index."""
    target = proportions * total
    base = np.floor(target).astype(np.int64)
    leftover = total - int(base.sum())
    frac = target - base
    order = np.lexsort((np.arange(frac.size), -frac))
    base[order[:leftover]] += 1
    return base


def dirichlet_partition(dataset: Dataset, K: int, alpha: float, seed: int) -> DataPartition:
    """Per class, allocate a Dir_K(alpha) proportion of its samples to each
    client. Every sample is assigned (dropped = 0)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    if not alpha > 0:
        raise ValueError("alpha must be > 0")
    rng = stream(seed, "dirichlet")
    per_client = [[] for _ in range(K)]
    for c in np.unique(dataset.labels):
        idx_c = np.flatnonzero(dataset.labels == c)
        gammas = rng.gamma(alpha, 1.0, size=K)
        s = gammas.sum()
        props = gammas / s if s > 0 else np.full(K, 1.0 / K)
        counts = _largest_remainder(props, idx_c.size)
        shuffled = idx_c[rng.permutation(idx_c.size)]
        offsets = np.concatenate([[0], np.cumsum(counts)])
        for j in range(K):
            per_client[j].append(shuffled[offsets[j]:offsets[j + 1]])
    assignments = [np.sort(np.concatenate(parts)) for parts in per_client]
    return DataPartition(assignments=tuple(assignments),
                         num_source_samples=dataset.size)


def shard_partition(dataset: Dataset, num_shards: int, shards_per_client: int,
                    seed: int) -> DataPartition:
    """Label-sort the samples, cut them into equal contiguous shards, and
    deal ``shards_per_client`` shards to each of num_shards/shards_per_client
    clients via a seeded shuffle. The n mod num_shards leftover samples are
    dropped."""
    if num_shards < 1 or shards_per_client < 1:
        raise ValueError("shard counts must be >= 1")
    if num_shards % shards_per_client != 0:
        raise ValueError(f"{num_shards} shards not divisible by "
                         f"{shards_per_client} shards per client")
    shard_size = dataset.size // num_shards
    if shard_size < 1:
        raise ValueError(f"{num_shards} shards need at least {num_shards} samples")
    K = num_shards // shards_per_client
    order = np.argsort(dataset.labels, kind="stable")
    shard_ids = stream(seed, "shards").permutation(num_shards)
    assignments = []
    for k in range(K):
        mine = shard_ids[k * shards_per_client:(k + 1) * shards_per_client]
        pieces = [order[s * shard_size:(s + 1) * shard_size] for s in mine]
        assignments.append(np.sort(np.concatenate(pieces)))
    return DataPartition(assignments=tuple(assignments),
                         num_source_samples=dataset.size)


def partition_stats(partition: DataPartition, dataset: Dataset) -> np.ndarray:
    """Per-client class histogram: num_clients rows by num_classes columns."""
    if partition.num_source_samples != dataset.size:
        raise ValueError("partition was built for a different dataset size")
    C = dataset.num_classes
    table = np.zeros((partition.num_clients, C), dtype=np.int64)
    for cid, idx in enumerate(partition.assignments):
        table[cid] = np.bincount(dataset.labels[idx], minlength=C)
    return table
