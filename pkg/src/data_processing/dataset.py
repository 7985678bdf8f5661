"""Labeled feature datasets: ingest, validation, preprocessing and synthesis.

Labels are stored as contiguous internal ids ``0..K-1`` assigned in order of
first appearance; ``class_names[k]`` keeps the label text the id came from.
"""

from __future__ import annotations

import csv
import struct
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from src.common.exceptions import DatasetError, ValidationError
from src.common.logging import get_logger
from src.common.utils import ensure_directory, write_bytes_atomic

logger = get_logger(__name__)

DATASET_MAGIC = b"SIHD"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sIQI")


class DatasetFormat(Enum):
    CSV = "csv"
    BINARY = "binary"

    @classmethod
    def from_path(cls, path: str | Path) -> DatasetFormat:
        return cls.CSV if Path(path).suffix.lower() == ".csv" else cls.BINARY


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self) -> None:
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.ndim != 2 or features.shape[0] < 1 or features.shape[1] < 1:
            raise ValidationError(
                f"features must be a non-empty n x d matrix, got shape {features.shape}"
            )
        if labels.shape[0] != features.shape[0]:
            raise ValidationError(
                f"{labels.shape[0]} labels for {features.shape[0]} feature rows"
            )
        if not np.all(np.isfinite(features)):
            raise ValidationError("features contain non-finite values")
        num_classes = len(self.class_names)
        if labels.min() < 0 or labels.max() >= num_classes:
            raise ValidationError(
                f"labels must lie in 0..{num_classes - 1}, "
                f"got range {labels.min()}..{labels.max()}"
            )
        if np.unique(labels).shape[0] != num_classes:
            raise ValidationError("class table lists classes with no samples")
        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", tuple(str(c) for c in self.class_names))

    @classmethod
    def from_labels(cls, features: np.ndarray, raw_labels: Iterable[object]) -> Dataset:
        """Remap arbitrary labels to ids ordered by first appearance."""
        names: dict[str, int] = {}
        ids = []
        for raw in raw_labels:
            key = str(raw)
            if key not in names:
                names[key] = len(names)
            ids.append(names[key])
        return cls(features=features, labels=np.asarray(ids), class_names=tuple(names))

    @property
    def n(self) -> int:
        return int(self.features.shape[0])

    @property
    def d(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def class_set(self) -> frozenset[int]:
        return frozenset(range(self.num_classes))

    @property
    def raw_labels(self) -> list[str]:
        return [self.class_names[k] for k in self.labels]

    def class_id(self, name: str) -> int:
        try:
            return self.class_names.index(str(name))
        except ValueError:
            raise ValidationError(f"Unknown class label: {name!r}") from None

    def subset(self, mask: np.ndarray) -> Dataset:
        """Rows selected by ``mask``; classes left without rows are dropped."""
        mask = np.asarray(mask)
        features = self.features[mask]
        raw = [self.class_names[k] for k in self.labels[mask]]
        if features.shape[0] == 0:
            raise ValidationError("subset selects no rows")
        present = set(raw)
        kept = [name for name in self.class_names if name in present]
        index = {name: i for i, name in enumerate(kept)}
        return Dataset(
            features=features,
            labels=np.asarray([index[name] for name in raw]),
            class_names=tuple(kept),
        )

    def select_classes(self, names: Sequence[str]) -> Dataset:
        ids = [self.class_id(name) for name in names]
        return self.subset(np.isin(self.labels, ids))

    def concat(self, other: Dataset) -> Dataset:
        """Append ``other``; its classes are matched by name, new names get new ids."""
        if other.d != self.d:
            raise ValidationError(
                f"feature width mismatch: {self.d} vs {other.d}"
            )
        names = list(self.class_names)
        index = {name: i for i, name in enumerate(names)}
        for name in other.class_names:
            if name not in index:
                index[name] = len(names)
                names.append(name)
        mapped = np.asarray([index[other.class_names[k]] for k in other.labels])
        return Dataset(
            features=np.vstack([self.features, other.features]),
            labels=np.concatenate([self.labels, mapped]),
            class_names=tuple(names),
        )


@dataclass(frozen=True)
class PreprocessStats:
    mean: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        mean = np.array(self.mean, dtype=np.float64, copy=True).reshape(-1)
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def fit_preprocessor(train: Dataset) -> PreprocessStats:
    return PreprocessStats(mean=train.features.mean(axis=0))


def apply_preprocessor(stats: PreprocessStats, features: np.ndarray) -> np.ndarray:
    """Center on the fitted mean, then scale each row to unit Euclidean norm.

    Rows equal to the mean stay zero vectors.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != stats.dim:
        raise ValidationError(
            f"feature width {x.shape[1]} does not match preprocessing width {stats.dim}"
        )
    centered = x - stats.mean
    norms = np.linalg.norm(centered, axis=1, keepdims=True)
    out = np.divide(centered, norms, out=np.zeros_like(centered), where=norms > 0)
    return out[0] if single else out


def generate_blobs(
    num_classes: int,
    per_class: int,
    dim: int,
    spread: float,
    seed: int,
) -> Dataset:
    """Isotropic Gaussian clusters whose means lie on the unit circle."""
    if num_classes < 1 or per_class < 1 or dim < 1:
        raise ValidationError("num_classes, per_class and dim must be positive")
    if spread <= 0:
        raise ValidationError(f"spread must be positive, got {spread}")

    rng = np.random.default_rng(seed)
    means = np.zeros((num_classes, dim))
    if dim == 1:
        means[:, 0] = np.linspace(-1.0, 1.0, num_classes) if num_classes > 1 else 0.0
    else:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        means[:, 0] = np.cos(angles)
        means[:, 1] = np.sin(angles)

    labels = np.repeat(np.arange(num_classes), per_class)
    noise = rng.standard_normal((num_classes * per_class, dim))
    features = means[labels] + spread * noise
    return Dataset(
        features=features,
        labels=labels,
        class_names=tuple(str(k) for k in range(num_classes)),
    )


def _parse_csv(path: Path) -> Dataset:
    rows: list[list[float]] = []
    raw_labels: list[str] = []
    width: int | None = None
    with open(path, encoding="utf-8", newline="") as f:
        for line_no, record in enumerate(csv.reader(f), start=1):
            if not record or all(not cell.strip() for cell in record):
                continue
            if len(record) < 2:
                raise DatasetError("expected label followed by features", line=line_no)
            if width is None:
                width = len(record) - 1
            elif len(record) - 1 != width:
                raise DatasetError(
                    f"expected {width} features, found {len(record) - 1}",
                    line=line_no,
                )
            try:
                values = [float(cell) for cell in record[1:]]
            except ValueError as e:
                raise DatasetError(f"non-numeric feature ({e})", line=line_no) from e
            if not np.all(np.isfinite(values)):
                raise DatasetError("non-finite feature value", line=line_no)
            raw_labels.append(record[0].strip())
            rows.append(values)

    if not rows:
        raise DatasetError(f"dataset file is empty: {path}")
    features = np.asarray(rows, dtype=np.float64)
    return Dataset.from_labels(features, raw_labels)


def _parse_binary(path: Path) -> Dataset:
    payload = path.read_bytes()
    if not payload:
        raise DatasetError(f"dataset file is empty: {path}")
    if len(payload) < _HEADER.size:
        raise DatasetError(f"truncated dataset header in {path}")
    magic, version, n, d = _HEADER.unpack_from(payload, 0)
    if magic != DATASET_MAGIC:
        raise DatasetError(f"not a binary dataset file (magic {magic!r}): {path}")
    if version != DATASET_VERSION:
        raise DatasetError(f"unsupported dataset version {version}: {path}")
    expected = _HEADER.size + 4 * n + 8 * n * d
    if len(payload) != expected:
        raise DatasetError(
            f"dataset file size {len(payload)} does not match header "
            f"(expected {expected} bytes): {path}"
        )
    labels = np.frombuffer(payload, dtype="<i4", count=n, offset=_HEADER.size)
    features = np.frombuffer(
        payload, dtype="<f8", count=n * d, offset=_HEADER.size + 4 * n
    ).reshape(n, d)
    if n == 0 or d == 0:
        raise DatasetError(f"dataset file holds no samples: {path}")
    return Dataset.from_labels(features, (int(v) for v in labels))


def load_dataset(
    path: str | Path, fmt: DatasetFormat | str | None = None
) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"dataset file not found: {path}")
    fmt = DatasetFormat(fmt) if fmt is not None else DatasetFormat.from_path(path)

    dataset = _parse_csv(path) if fmt is DatasetFormat.CSV else _parse_binary(path)
    logger.debug(
        "Loaded dataset",
        extra={
            "path": str(path),
            "format": fmt.value,
            "n": dataset.n,
            "d": dataset.d,
            "classes": dataset.num_classes,
        },
    )
    return dataset


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write the binary format; class names must be integers (stored as i32)."""
    try:
        raw = np.asarray([int(name) for name in dataset.class_names], dtype=np.int64)
    except ValueError as e:
        raise DatasetError(
            "binary datasets store integer labels; class names are not integers"
        ) from e
    if raw.size and (raw.min() < np.iinfo(np.int32).min or raw.max() > np.iinfo(np.int32).max):
        raise DatasetError("class label does not fit in a signed 32-bit integer")
    header = _HEADER.pack(DATASET_MAGIC, DATASET_VERSION, dataset.n, dataset.d)
    labels = raw[dataset.labels].astype("<i4").tobytes()
    features = np.ascontiguousarray(dataset.features, dtype="<f8").tobytes()
    write_bytes_atomic(path, header + labels + features)


def save_csv(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    ensure_directory(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f)
        for name, row in zip(dataset.raw_labels, dataset.features):
            writer.writerow([name, *(repr(float(v)) for v in row)])
