"""Datasets: the synthetic three-cluster 2-D set, IDX-format image files,
CSV round-tripping, and seeded batching.

The synthetic set has clusters A ~ N((-2,0), 0.5 I) labelled 0 and
B1 ~ N((2,0), 0.5 I), B2 ~ N((6,0), 0.5 I) labelled 1, with exact per-split
counts (train 1000/5000/4000, test 200/1000/800) so split statistics are
stable across seeds.
"""

import csv
import gzip
import struct
from dataclasses import dataclass

import numpy as np

from udr.errors import ArgumentError, DataFormatError
from udr.tensor import Prng, as_f64

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

DOMAINS = ("unit_interval", "unbounded")


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) f64
    labels: np.ndarray    # (n,) int64
    class_count: int
    domain: str

    def __post_init__(self):
        self.features = as_f64(self.features)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.labels) != self.features.shape[0]:
            raise ArgumentError(
                f"features {self.features.shape} / labels {self.labels.shape} mismatch"
            )
        if len(self.labels) < 1:
            raise ArgumentError("dataset must hold at least one sample")
        if self.domain not in DOMAINS:
            raise ArgumentError(f"unknown domain {self.domain!r}")
        if np.any(self.labels < 0) or np.any(self.labels >= self.class_count):
            raise ArgumentError(f"labels out of range [0, {self.class_count})")
        if not np.all(np.isfinite(self.features)):
            raise ArgumentError("non-finite feature entries")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx],
                       self.class_count, self.domain)

    @property
    def clip01(self) -> bool:
        return self.domain == "unit_interval"


_CLUSTERS = (
    # (center, label, train_count, test_count)
    ((-2.0, 0.0), 0, 1000, 200),
    ((2.0, 0.0), 1, 5000, 1000),
    ((6.0, 0.0), 1, 4000, 800),
)
_CLUSTER_STD = np.sqrt(0.5)


def gen_synthetic(seed: int) -> tuple[Dataset, Dataset]:
    """Three-cluster 2-D set: 10k train / 2k test, label-1 prior 0.9 exactly."""
    rng = Prng(seed)
    splits = []
    for split_id in range(2):  # 0 = train, 1 = test
        feats, labels = [], []
        for c, (center, label, *counts) in enumerate(_CLUSTERS):
            n = counts[split_id]
            sub = rng.substream(split_id, c)
            pts = sub.normal(
                np.tile(np.asarray(center), (n, 1)),
                np.full((n, 2), _CLUSTER_STD ** 2),
            )
            feats.append(pts)
            labels.append(np.full(n, label, dtype=np.int64))
        splits.append(Dataset(np.vstack(feats), np.concatenate(labels), 2, "unbounded"))
    return splits[0], splits[1]


def write_csv(ds: Dataset, path) -> None:
    d = ds.dim
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"x{i}" for i in range(d)] + ["label"])
        for i in range(ds.n):
            w.writerow([repr(v) for v in ds.features[i]] + [int(ds.labels[i])])


def read_csv(path, class_count: int = 2, domain: str = "unbounded") -> Dataset:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if not header or header[-1] != "label":
            raise DataFormatError(f"{path}: expected trailing 'label' column")
        feats, labels = [], []
        for row in r:
            feats.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    if not feats:
        raise DataFormatError(f"{path}: no data rows")
    return Dataset(np.asarray(feats), np.asarray(labels), class_count, domain)


def _open_maybe_gzip(path):
    with open(path, "rb") as f:
        head = f.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Big-endian IDX pair; pixels scaled to [0,1], images flattened."""
    with _open_maybe_gzip(images_path) as f:
        header = f.read(16)
        if len(header) < 16:
            raise DataFormatError(f"{images_path}: truncated image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IMAGE_MAGIC:
            raise DataFormatError(
                f"{images_path}: bad image magic 0x{magic:08x} (want 0x{IMAGE_MAGIC:08x})"
            )
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise DataFormatError(
                f"{images_path}: truncated pixel data "
                f"({len(raw)} bytes for {count}x{rows}x{cols})"
            )
    with _open_maybe_gzip(labels_path) as f:
        header = f.read(8)
        if len(header) < 8:
            raise DataFormatError(f"{labels_path}: truncated label header")
        magic, label_count = struct.unpack(">II", header)
        if magic != LABEL_MAGIC:
            raise DataFormatError(
                f"{labels_path}: bad label magic 0x{magic:08x} (want 0x{LABEL_MAGIC:08x})"
            )
        label_raw = f.read(label_count)
        if len(label_raw) != label_count:
            raise DataFormatError(f"{labels_path}: truncated label data")
    if label_count != count:
        raise DataFormatError(
            f"count mismatch: {count} images vs {label_count} labels"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8).reshape(count, rows * cols)
    features = pixels.astype(np.float64) / 255.0
    labels = np.frombuffer(label_raw, dtype=np.uint8).astype(np.int64)
    return Dataset(features, labels, 10, "unit_interval")


def batch_indices(n: int, batch_size: int, rng: Prng):
    """Seeded permutation of range(n) sliced into batches; short tail kept."""
    if batch_size < 1:
        raise ArgumentError(f"batch_size must be >= 1, got {batch_size}")
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def batches(ds: Dataset, batch_size: int, rng: Prng):
    """Sequence of (features, labels) batches covering a fresh permutation."""
    for idx in batch_indices(ds.n, batch_size, rng):
        yield ds.features[idx], ds.labels[idx]
