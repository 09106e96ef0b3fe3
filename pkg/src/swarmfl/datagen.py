"""Synthetic classification data, Dirichlet label partitioning and per-device
relevance/redundancy statistics."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import rng
from .errors import PartitionInfeasible, UnknownDevice


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray  # (n, f) float64
    labels: np.ndarray  # (n,) int64
    num_classes: int

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, copy=True)
        y = np.array(self.labels, dtype=np.int64, copy=True)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise ValueError("features must be (n, f) and labels (n,)")
        if not np.all(np.isfinite(x)):
            raise ValueError("features must be finite")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    @property
    def n(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(np.arange(n_first)), self.subset(np.arange(n_first, self.n))


def _class_means(n_features: int, num_classes: int, class_sep: float, g: np.random.Generator) -> np.ndarray:
    # Scaled orthonormal directions: pairwise distance is exactly class_sep when
    # n_features >= num_classes; otherwise random directions on the same sphere.
    radius = class_sep / np.sqrt(2.0)
    if n_features >= num_classes:
        q, _ = np.linalg.qr(g.standard_normal((n_features, n_features)))
        return radius * q[:, :num_classes].T
    dirs = g.standard_normal((num_classes, n_features))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return radius * dirs


def make_synthetic_dataset(
    n_samples: int, n_features: int, num_classes: int, class_sep: float, seed: int
) -> Dataset:
    """Unit-variance Gaussian clusters, one per class, with balanced class counts."""
    if num_classes < 2 or n_samples < num_classes or n_features < 1:
        raise ValueError("need n_samples >= num_classes >= 2 and n_features >= 1")
    means = _class_means(n_features, num_classes, class_sep, rng.stream(seed, "data.means"))
    g = rng.stream(seed, "data.samples")
    labels = np.arange(n_samples, dtype=np.int64) % num_classes
    g.shuffle(labels)
    features = means[labels] + g.standard_normal((n_samples, n_features))
    return Dataset(features, labels, num_classes)


# -- binary interchange format -------------------------------------------------
# header: three little-endian uint64 {n, f, C}; then n*f float64 (row-major);
# then n int64 labels. A JSON sidecar carries the same counts plus a checksum.

_HEADER = struct.Struct("<QQQ")


def save_dataset(ds: Dataset, path: str | Path) -> Path:
    import hashlib

    path = Path(path)
    blob = (
        _HEADER.pack(ds.n, ds.n_features, ds.num_classes)
        + ds.features.astype("<f8").tobytes(order="C")
        + ds.labels.astype("<i8").tobytes(order="C")
    )
    path.write_bytes(blob)
    meta = {
        "format": "swarmfl-dataset",
        "version": 1,
        "n": ds.n,
        "n_features": ds.n_features,
        "num_classes": ds.num_classes,
        "features_dtype": "<f8",
        "labels_dtype": "<i8",
        "header_bytes": _HEADER.size,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    meta_path = path.with_suffix(path.suffix + ".json")
    meta_path.write_text(json.dumps(meta, indent=2), encoding="utf-8")
    return meta_path


def load_dataset(path: str | Path) -> Dataset:
    raw = Path(path).read_bytes()
    n, f, c = _HEADER.unpack_from(raw, 0)
    off = _HEADER.size
    feats = np.frombuffer(raw, dtype="<f8", count=n * f, offset=off).reshape(n, f)
    off += 8 * n * f
    labels = np.frombuffer(raw, dtype="<i8", count=n, offset=off)
    if off + 8 * n != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes in dataset file")
    return Dataset(feats, labels, int(c))


# -- partitioning --------------------------------------------------------------


@dataclass(frozen=True)
class PartitionAssignment:
    device_to_indices: Mapping[int, np.ndarray]

    def indices(self, device_id: int) -> np.ndarray:
        try:
            return self.device_to_indices[device_id]
        except KeyError:
            raise UnknownDevice(device_id) from None

    def sizes(self) -> dict[int, int]:
        return {d: int(len(ix)) for d, ix in self.device_to_indices.items()}


def _split_class(idx: np.ndarray, props: np.ndarray) -> list[np.ndarray]:
    cuts = (np.cumsum(props) * len(idx)).astype(np.int64)[:-1]
    return np.split(idx, cuts)


def dirichlet_partition(
    ds: Dataset,
    n_devices: int,
    alpha: float,
    seed: int,
    coverage: float = 1.0,
    device_ids: Optional[Sequence[int]] = None,
    max_resample: int = 20,
) -> PartitionAssignment:
    """Split each class across devices with proportions ~ Dirichlet(alpha).

    If a draw leaves some device empty it is redrawn (up to ``max_resample``
    times); after that, each empty device takes one sample from the currently
    largest device (lowest id on ties).
    """
    if n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    ids = list(range(n_devices)) if device_ids is None else list(device_ids)
    if len(ids) != n_devices:
        raise ValueError("device_ids length must equal n_devices")
    per_class = [np.flatnonzero(ds.labels == c) for c in range(ds.num_classes)]
    used = sum(int(round(coverage * len(ix))) for ix in per_class)
    if n_devices > used:
        raise PartitionInfeasible(f"{n_devices} devices but only {used} samples to distribute")

    buckets: list[list[np.ndarray]] = []
    for attempt in range(max_resample + 1):
        g = rng.stream(seed, "partition", attempt)
        buckets = [[] for _ in range(n_devices)]
        for idx in per_class:
            idx = idx.copy()
            g.shuffle(idx)
            idx = idx[: int(round(coverage * len(idx)))]
            props = g.dirichlet(np.full(n_devices, alpha))
            for k, part in enumerate(_split_class(idx, props)):
                buckets[k].append(part)
        if all(sum(len(p) for p in b) > 0 for b in buckets):
            break

    lists = [np.sort(np.concatenate(b)) if b else np.empty(0, np.int64) for b in buckets]
    for k in range(n_devices):
        if len(lists[k]) == 0:
            donor = max(range(n_devices), key=lambda j: (len(lists[j]), -j))
            lists[k] = lists[donor][-1:]
            lists[donor] = lists[donor][:-1]
    return PartitionAssignment({ids[k]: lists[k].astype(np.int64) for k in range(n_devices)})


# -- statistics ------------------------------------------------------------------


def label_histogram(labels: np.ndarray, num_classes: int) -> np.ndarray:
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes).astype(np.float64)
    total = counts.sum()
    return counts / total if total else counts


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass(frozen=True)
class DeviceDataStats:
    label_hist: np.ndarray
    n_i: int
    relevance: float
    redundancy: float


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def device_stats(
    assignment: PartitionAssignment, ds: Dataset, device_id: int, already_selected: Iterable[int] = ()
) -> DeviceDataStats:
    """Relevance = 1 - TV(local, global); redundancy = max similarity to any
    already-selected device (0 when none is selected)."""
    idx = assignment.indices(device_id)
    if len(idx) == 0:
        raise ValueError(f"device {device_id} holds no samples")
    hist = label_histogram(ds.labels[idx], ds.num_classes)
    global_hist = label_histogram(ds.labels, ds.num_classes)
    relevance = _clamp01(1.0 - tv_distance(hist, global_hist))
    redundancy = 0.0
    for s in already_selected:
        other = label_histogram(ds.labels[assignment.indices(s)], ds.num_classes)
        redundancy = max(redundancy, 1.0 - tv_distance(hist, other))
    return DeviceDataStats(hist, int(len(idx)), relevance, _clamp01(redundancy))


def histogram_matrix(assignment: PartitionAssignment, ds: Dataset, device_ids: Sequence[int]) -> np.ndarray:
    return np.stack([label_histogram(ds.labels[assignment.indices(d)], ds.num_classes) for d in device_ids])


def similarity_matrix(hists: np.ndarray) -> np.ndarray:
    """Pairwise ``1 - TV`` between rows of a histogram matrix, clamped to [0, 1]."""
    tv = 0.5 * np.abs(hists[:, None, :] - hists[None, :, :]).sum(axis=2)
    return np.clip(1.0 - tv, 0.0, 1.0)
