"""Dataset ingestion, synthetic generation, splitting, and group construction.

Supported sources: IDX image/label files (big-endian, public layout),
regression CSVs with a header row, and seeded Gaussian blob generators.
Benchmark groups are built as an anchor plus its nearest neighbors in
model-output space, mirroring how redundant groups are constructed for
the attribution benchmark.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DataFormatError, SizeLimitError
from .seeding import STREAM_BLOBS, STREAM_GROUPS, STREAM_SPLIT, rng

IDX_MAGIC_LABELS = 0x00000801
IDX_MAGIC_IMAGES = 0x00000803


@dataclass(frozen=True)
class Dataset:
    """A feature matrix with labels and task metadata.

    ``labels`` holds integer class indices when ``n_classes`` is set and
    real-valued targets otherwise (regression).
    """

    features: np.ndarray
    labels: np.ndarray
    n_classes: Optional[int]
    name: str = "dataset"

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ConfigError("features must be a non-empty 2-D matrix")
        if not np.all(np.isfinite(feats)):
            raise ConfigError("features contain non-finite values")
        if self.n_classes is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.min(initial=0) < 0 or (labels.size and labels.max() >= self.n_classes):
                raise ConfigError(f"class index out of range for n_classes={self.n_classes}")
        else:
            labels = np.asarray(self.labels, dtype=np.float64)
            if not np.all(np.isfinite(labels)):
                raise ConfigError("regression targets contain non-finite values")
        if labels.shape[0] != feats.shape[0]:
            raise ConfigError("features and labels disagree on example count")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def subset(self, indices: Sequence[int], name: Optional[str] = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.n_classes,
                       name or f"{self.name}[{len(idx)}]")

    def without(self, indices: Sequence[int]) -> "Dataset":
        mask = np.ones(self.n, dtype=bool)
        mask[np.asarray(indices, dtype=np.int64)] = False
        return Dataset(self.features[mask], self.labels[mask], self.n_classes,
                       f"{self.name}-minus{self.n - int(mask.sum())}")


@dataclass(frozen=True)
class GroupSpec:
    """A benchmark group: sorted unique indices containing its anchor."""

    indices: tuple
    anchor: int
    construction: str  # "similar_softmax" | "random"

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ConfigError("group indices must be non-empty")
        if len(set(idx)) != len(idx):
            raise ConfigError("group indices contain duplicates")
        if sorted(idx) != list(idx):
            idx = tuple(sorted(idx))
        if self.anchor not in idx:
            raise ConfigError("group anchor must be one of its indices")
        object.__setattr__(self, "indices", idx)

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class SyntheticConfig:
    """Gaussian blob generator settings; identical configs give identical data."""

    n_classes: int
    n_per_class: int
    dim: int
    center_scale: float = 3.0
    stddev: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1 or self.n_per_class < 1 or self.dim < 1:
            raise ConfigError("blob counts and dimension must be positive")
        if self.stddev < 0:
            raise ConfigError("blob stddev must be non-negative")


def load_idx(raw: bytes) -> np.ndarray:
    """Parse an IDX byte stream into a uint8 tensor.

    The stream starts with a big-endian magic (0x803 for images with
    three dimension words, 0x801 for labels with one), followed by the
    big-endian 32-bit dimension sizes and the raw payload.
    """
    if len(raw) < 4:
        raise DataFormatError("IDX stream shorter than its magic")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic == IDX_MAGIC_IMAGES:
        ndim = 3
    elif magic == IDX_MAGIC_LABELS:
        ndim = 1
    else:
        raise DataFormatError(f"bad IDX magic 0x{magic:08x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise DataFormatError("IDX stream truncated inside its dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    expected = int(np.prod(dims))
    payload = raw[header_end:]
    if len(payload) != expected:
        raise DataFormatError(
            f"IDX payload holds {len(payload)} bytes, header promises {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims).copy()


def dump_idx(tensor: np.ndarray) -> bytes:
    """Serialize a uint8 tensor back to IDX bytes (inverse of load_idx)."""
    arr = np.ascontiguousarray(tensor, dtype=np.uint8)
    if arr.ndim == 3:
        magic = IDX_MAGIC_IMAGES
    elif arr.ndim == 1:
        magic = IDX_MAGIC_LABELS
    else:
        raise DataFormatError(f"IDX serialization supports 1-D or 3-D tensors, got {arr.ndim}-D")
    header = struct.pack(f">I{arr.ndim}I", magic, *arr.shape)
    return header + arr.tobytes()


def load_idx_dataset(images_path: str, labels_path: str, name: str = "idx") -> Dataset:
    """Read an IDX image/label file pair into a flattened, [0,1]-scaled Dataset."""
    images = load_idx(Path(images_path).read_bytes())
    labels = load_idx(Path(labels_path).read_bytes())
    if images.ndim != 3 or labels.ndim != 1:
        raise DataFormatError("expected a 3-D image file and a 1-D label file")
    if images.shape[0] != labels.shape[0]:
        raise DataFormatError("image and label files disagree on example count")
    feats = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    n_classes = int(labels.max()) + 1
    return Dataset(feats, labels.astype(np.int64), n_classes, name)


def load_regression_csv(path: str, target_column: Optional[str] = None,
                        name: Optional[str] = None) -> Dataset:
    """Read a regression CSV with a header row.

    The last column is the target unless ``target_column`` names another
    header field.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty CSV") from None
        rows = list(reader)
    if not rows:
        raise DataFormatError(f"{path}: CSV has a header but no data rows")
    if target_column is None:
        target_idx = len(header) - 1
    else:
        if target_column not in header:
            raise ConfigError(f"target column {target_column!r} not in CSV header")
        target_idx = header.index(target_column)
    try:
        table = np.array([[float(v) for v in row] for row in rows], dtype=np.float64)
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric cell ({exc})") from None
    if table.shape[1] != len(header):
        raise DataFormatError(f"{path}: row width disagrees with header")
    feat_cols = [i for i in range(table.shape[1]) if i != target_idx]
    return Dataset(table[:, feat_cols], table[:, target_idx], None,
                   name or Path(path).stem)


def make_synthetic_blobs(cfg: SyntheticConfig) -> Dataset:
    """Deterministic Gaussian blobs: one isotropic cluster per class."""
    gen = rng(cfg.seed, STREAM_BLOBS)
    centers = cfg.center_scale * gen.standard_normal((cfg.n_classes, cfg.dim))
    feats = np.empty((cfg.n_classes * cfg.n_per_class, cfg.dim))
    labels = np.empty(cfg.n_classes * cfg.n_per_class, dtype=np.int64)
    for c in range(cfg.n_classes):
        block = slice(c * cfg.n_per_class, (c + 1) * cfg.n_per_class)
        feats[block] = centers[c] + cfg.stddev * gen.standard_normal((cfg.n_per_class, cfg.dim))
        labels[block] = c
    return Dataset(feats, labels, cfg.n_classes, name=f"blobs{cfg.n_classes}x{cfg.n_per_class}")


def split(dataset: Dataset, test_fraction: float, seed: int):
    """Seeded disjoint, exhaustive train/test partition."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(dataset.n * test_fraction))
    n_test = min(max(n_test, 1), dataset.n - 1)
    perm = rng(seed, STREAM_SPLIT).permutation(dataset.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return (dataset.subset(train_idx, f"{dataset.name}-train"),
            dataset.subset(test_idx, f"{dataset.name}-test"))


def standardize(train: Dataset, test: Dataset):
    """Scale features to per-dimension mean 0 / variance 1, fit on train only.

    Constant dimensions are left unscaled to avoid division by zero.
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return (
        Dataset((train.features - mean) / std, train.labels, train.n_classes, train.name),
        Dataset((test.features - mean) / std, test.labels, test.n_classes, test.name),
        (mean, std),
    )


def build_similar_groups(probe_outputs: np.ndarray, group_size: int,
                         n_groups: int, seed: int) -> list:
    """Groups of an anchor plus its nearest rows in probe-output space.

    ``probe_outputs`` row i is the model's output vector on example i
    (class probabilities, or the raw prediction for regression). Anchors
    are sampled uniformly without replacement; neighbors are the
    ``group_size - 1`` closest other rows to the anchor under L2
    distance, ties resolved toward the lower index.
    """
    probe = np.asarray(probe_outputs, dtype=np.float64)
    if probe.ndim == 1:
        probe = probe[:, None]
    n = probe.shape[0]
    if group_size < 1:
        raise ConfigError("group_size must be at least 1")
    if group_size > n:
        raise SizeLimitError(f"group_size {group_size} exceeds pool of {n} examples")
    if n_groups > n:
        raise SizeLimitError(f"cannot sample {n_groups} distinct anchors from {n} examples")
    gen = rng(seed, STREAM_GROUPS, 0)
    anchors = gen.choice(n, size=n_groups, replace=False)
    groups = []
    for anchor in anchors:
        dist = np.linalg.norm(probe - probe[anchor], axis=1)
        dist[anchor] = -np.inf  # anchor always first
        order = np.argsort(dist, kind="stable")
        members = order[:group_size]
        groups.append(GroupSpec(tuple(sorted(int(i) for i in members)),
                                anchor=int(anchor), construction="similar_softmax"))
    return groups


def build_random_groups(n: int, group_size: int, n_groups: int, seed: int) -> list:
    """Uniformly sampled groups (without replacement within each group)."""
    if group_size > n:
        raise SizeLimitError(f"group_size {group_size} exceeds pool of {n} examples")
    gen = rng(seed, STREAM_GROUPS, 1)
    groups = []
    for _ in range(n_groups):
        members = gen.choice(n, size=group_size, replace=False)
        groups.append(GroupSpec(tuple(sorted(int(i) for i in members)),
                                anchor=int(members[0]), construction="random"))
    return groups
