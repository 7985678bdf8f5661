"""Anchor-based RBF feature map.

phi(x) = [exp(-||x - a_1||^2 / 2 sigma^2), ..., exp(-||x - a_r||^2 / 2 sigma^2), 1]

Only the RBF kernel is implemented; another kernel would be a new
``AnchorSet`` kind with its own ``_kernel_block``.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from src.common.exceptions import KernelMapError, ValidationError
from src.common.logging import get_logger
from src.data_processing.dataset import Dataset

logger = get_logger(__name__)

# Rows per block so that a block's (rows, r, d) difference tensor stays small.
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class AnchorSet:
    anchors: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)
    sigma: float | None = None
    bias: bool = True

    def __post_init__(self) -> None:
        anchors = np.array(self.anchors, dtype=np.float64, copy=True)
        indices = np.array(self.indices, dtype=np.int64, copy=True).reshape(-1)
        if anchors.ndim != 2 or anchors.shape[0] < 1:
            raise KernelMapError(f"anchors must be an r x d matrix with r >= 1, got {anchors.shape}")
        if indices.shape[0] != anchors.shape[0]:
            raise KernelMapError("one provenance index is required per anchor")
        if np.unique(indices).shape[0] != indices.shape[0]:
            raise KernelMapError("anchor indices must be distinct")
        if self.sigma is not None and not self.sigma > 0:
            raise KernelMapError(f"sigma must be positive, got {self.sigma}")
        anchors.setflags(write=False)
        indices.setflags(write=False)
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "indices", indices)

    @property
    def r(self) -> int:
        return int(self.anchors.shape[0])

    @property
    def d(self) -> int:
        return int(self.anchors.shape[1])

    @property
    def output_dim(self) -> int:
        return self.r + (1 if self.bias else 0)

    def with_sigma(self, sigma: float) -> AnchorSet:
        return replace(self, sigma=float(sigma))


def sample_anchors(train: Dataset, r: int, seed: int | np.random.Generator) -> AnchorSet:
    """Choose ``r`` distinct training rows uniformly without replacement."""
    if not 1 <= r <= train.n:
        raise KernelMapError(f"anchor count must be in 1..{train.n}, got {r}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    indices = rng.choice(train.n, size=r, replace=False)
    return AnchorSet(anchors=train.features[indices], indices=indices)


def estimate_sigma(
    train: Dataset,
    anchors: AnchorSet,
    sample_pairs: int,
    seed: int | np.random.Generator,
) -> float:
    """Median Euclidean distance between training points and anchors.

    When ``sample_pairs`` covers every (point, anchor) pair the median is
    exhaustive; otherwise pairs are drawn uniformly with replacement.
    """
    if sample_pairs < 1:
        raise KernelMapError(f"sample_pairs must be >= 1, got {sample_pairs}")
    total = train.n * anchors.r
    if sample_pairs >= total:
        diffs = train.features[:, None, :] - anchors.anchors[None, :, :]
        distances = np.sqrt((diffs**2).sum(axis=2)).reshape(-1)
    else:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        points = rng.integers(0, train.n, size=sample_pairs)
        picks = rng.integers(0, anchors.r, size=sample_pairs)
        diffs = train.features[points] - anchors.anchors[picks]
        distances = np.sqrt((diffs**2).sum(axis=1))

    if not np.any(distances > 0):
        raise KernelMapError(
            "all sampled points coincide with their anchors; set sigma explicitly"
        )
    sigma = float(np.median(distances))
    if sigma == 0.0:
        sigma = float(np.median(distances[distances > 0]))
        logger.warning(
            "Median distance is zero, using median of nonzero distances",
            extra={"sigma": sigma},
        )
    logger.debug("Estimated kernel width", extra={"sigma": sigma, "pairs": distances.size})
    return sigma


def _require_sigma(anchors: AnchorSet) -> float:
    if anchors.sigma is None or not anchors.sigma > 0:
        raise KernelMapError("kernel width sigma is not set")
    return anchors.sigma


def _kernel_block(x: np.ndarray, anchors: AnchorSet, sigma: float) -> np.ndarray:
    sq = ((x[:, None, :] - anchors.anchors[None, :, :]) ** 2).sum(axis=2)
    k = np.exp(-sq / (2.0 * sigma * sigma))
    if anchors.bias:
        k = np.hstack([k, np.ones((x.shape[0], 1))])
    return k


def embed_batch(
    features: np.ndarray,
    anchors: AnchorSet,
    threads: int = 1,
) -> np.ndarray:
    """Embed every row; identical to calling :func:`embed` row by row."""
    sigma = _require_sigma(anchors)
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != anchors.d:
        raise ValidationError(f"feature width {x.shape[1]} does not match anchors width {anchors.d}")

    rows_per_block = max(1, _BLOCK_ELEMENTS // max(1, anchors.r * anchors.d))
    starts = list(range(0, x.shape[0], rows_per_block))
    out = np.empty((x.shape[0], anchors.output_dim))

    def fill(start: int) -> None:
        stop = min(start + rows_per_block, x.shape[0])
        out[start:stop] = _kernel_block(x[start:stop], anchors, sigma)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, starts))
    else:
        for start in starts:
            fill(start)
    return out


def embed(x: np.ndarray, anchors: AnchorSet) -> np.ndarray:
    vector = np.asarray(x, dtype=np.float64).reshape(1, -1)
    return embed_batch(vector, anchors)[0]
