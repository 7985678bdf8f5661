"""Hamming ranking and retrieval metrics under leave-one-out evaluation.

Codes are packed little-endian into 64-bit words (bit j of a code is bit
j % 64 of word j // 64, set when the code entry is +1) so distances are a
popcount of XORed words.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np

from src.common.exceptions import ValidationError
from src.common.logging import get_logger
from src.common.utils import save_json

logger = get_logger(__name__)

WORD_BITS = 64

_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)


def _popcount_swar(words: np.ndarray) -> np.ndarray:
    x = words - ((words >> np.uint64(1)) & _M1)
    x = (x & _M2) + ((x >> np.uint64(2)) & _M2)
    x = (x + (x >> np.uint64(4))) & _M4
    return (x * _H01) >> np.uint64(56)


def popcount(words: np.ndarray) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint64)
    if hasattr(np, "bitwise_count"):
        return np.bitwise_count(words).astype(np.int64)
    return _popcount_swar(words).astype(np.int64)


def num_words(m: int) -> int:
    return -(-m // WORD_BITS)


def pack_codes(codes: np.ndarray) -> np.ndarray:
    """Pack an n x m matrix of -1/+1 (or 0/1) into n x ceil(m/64) uint64 words."""
    codes = np.atleast_2d(np.asarray(codes))
    n, m = codes.shape
    bits = (codes > 0).astype(np.uint8)
    packed = np.packbits(bits, axis=1, bitorder="little")
    padded = np.zeros((n, num_words(m) * 8), dtype=np.uint8)
    padded[:, : packed.shape[1]] = packed
    return padded.view("<u8").astype(np.uint64)


def unpack_codes(words: np.ndarray, m: int) -> np.ndarray:
    words = np.atleast_2d(np.asarray(words, dtype=np.uint64))
    if words.shape[1] != num_words(m):
        raise ValidationError(f"{words.shape[1]} words cannot hold exactly {m} bits")
    raw = np.ascontiguousarray(words.astype("<u8")).view(np.uint8)
    bits = np.unpackbits(raw, axis=1, count=m, bitorder="little")
    return (2 * bits.astype(np.int8) - 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class CodeDatabase:
    words: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    m: int

    def __post_init__(self) -> None:
        words = np.atleast_2d(np.array(self.words, dtype=np.uint64, copy=True))
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if self.m < 1:
            raise ValidationError(f"code length must be positive, got {self.m}")
        if words.shape[1] != num_words(self.m):
            raise ValidationError(f"{words.shape[1]} words per code, expected {num_words(self.m)}")
        if labels.shape[0] != words.shape[0]:
            raise ValidationError(f"{labels.shape[0]} labels for {words.shape[0]} codes")
        words.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_codes(cls, codes: np.ndarray, labels: np.ndarray) -> CodeDatabase:
        codes = np.atleast_2d(np.asarray(codes))
        return cls(words=pack_codes(codes), labels=labels, m=int(codes.shape[1]))

    @property
    def n(self) -> int:
        return int(self.words.shape[0])

    def codes(self) -> np.ndarray:
        return unpack_codes(self.words, self.m)


def hamming_distance(a: np.ndarray, b: np.ndarray) -> int:
    a = np.asarray(a).reshape(-1)
    b = np.asarray(b).reshape(-1)
    if a.shape != b.shape:
        raise ValidationError(f"codes have different lengths: {a.shape[0]} and {b.shape[0]}")
    xor = np.bitwise_xor(pack_codes(a[None, :])[0], pack_codes(b[None, :])[0])
    return int(popcount(xor).sum())


def hamming_distances(query_words: np.ndarray, db: CodeDatabase) -> np.ndarray:
    """Distances from one packed query to every database code."""
    query_words = np.asarray(query_words, dtype=np.uint64).reshape(-1)
    if query_words.shape[0] != db.words.shape[1]:
        raise ValidationError("query and database codes differ in length")
    return popcount(np.bitwise_xor(db.words, query_words[None, :])).sum(axis=1)


def _query_words(query: np.ndarray, db: CodeDatabase) -> np.ndarray:
    query = np.asarray(query).reshape(-1)
    if query.shape[0] != db.m:
        raise ValidationError(f"query has {query.shape[0]} bits, database codes have {db.m}")
    return pack_codes(query[None, :])[0]


def rank_by_hamming(query: np.ndarray, db: CodeDatabase) -> np.ndarray:
    """Database indices by ascending distance; ties keep index order."""
    distances = hamming_distances(_query_words(query, db), db)
    return np.argsort(distances, kind="stable")


class QueryHit(NamedTuple):
    indices: np.ndarray
    distances: np.ndarray


def query_top(queries: np.ndarray, db: CodeDatabase, top: int) -> list[QueryHit]:
    if top < 1:
        raise ValidationError(f"top must be positive, got {top}")
    hits = []
    for query in np.atleast_2d(np.asarray(queries)):
        distances = hamming_distances(_query_words(query, db), db)
        order = np.argsort(distances, kind="stable")[:top]
        hits.append(QueryHit(indices=order, distances=distances[order]))
    return hits


def average_precision(relevance: np.ndarray) -> float:
    """Mean of precision@p over relevant positions p; 0 when nothing is relevant."""
    relevance = np.asarray(relevance, dtype=bool).reshape(-1)
    total = int(relevance.sum())
    if total == 0:
        return 0.0
    positions = np.flatnonzero(relevance) + 1
    hits = np.arange(1, total + 1)
    return float(np.mean(hits / positions))


def precision_at_radius(distances: np.ndarray, relevant: np.ndarray, radius: int) -> float:
    """Precision among items within ``radius``; 0 when nothing is retrieved."""
    if radius < 0:
        raise ValidationError(f"radius must be non-negative, got {radius}")
    within = np.asarray(distances) <= radius
    retrieved = int(within.sum())
    if retrieved == 0:
        return 0.0
    return float(np.asarray(relevant, dtype=bool)[within].sum() / retrieved)


@dataclass
class EvalReport:
    map: float | None
    precision_at_radius: dict[int, float]
    pr_curve: list[tuple[float, float]]
    queries: int
    excluded_queries: int
    seconds: float = 0.0

    @property
    def map_defined(self) -> bool:
        return self.map is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "map": self.map,
            "precision_at_radius": {str(r): p for r, p in self.precision_at_radius.items()},
            "pr_curve": [[recall, precision] for recall, precision in self.pr_curve],
            "queries": self.queries,
            "excluded_queries": self.excluded_queries,
            "seconds": self.seconds,
        }


def write_report(report: EvalReport, path: str | Path) -> None:
    save_json(path, report.to_dict())


class _QueryStats(NamedTuple):
    ap: float | None
    retrieved: np.ndarray
    relevant_retrieved: np.ndarray
    relevant_total: int


def _leave_one_out(i: int, db: CodeDatabase) -> _QueryStats:
    distances = np.delete(hamming_distances(db.words[i], db), i)
    relevant = np.delete(db.labels, i) == db.labels[i]
    order = np.argsort(distances, kind="stable")
    total = int(relevant.sum())
    ap = average_precision(relevant[order]) if total > 0 else None
    retrieved = np.cumsum(np.bincount(distances, minlength=db.m + 1))
    relevant_retrieved = np.cumsum(np.bincount(distances[relevant], minlength=db.m + 1))
    return _QueryStats(ap, retrieved, relevant_retrieved, total)


def evaluate(
    db: CodeDatabase, radii: tuple[int, ...] | list[int] = (2,), threads: int = 1
) -> EvalReport:
    """Each code queries all the others; relevance is a shared label.

    Queries with no relevant item are left out of the mAP and the PR curve
    but still count towards precision at each radius.
    """
    if db.n < 2:
        raise ValidationError("leave-one-out evaluation needs at least 2 codes")
    for radius in radii:
        if not 0 <= radius <= db.m:
            raise ValidationError(f"radius {radius} outside 0..{db.m}")

    started = time.perf_counter()
    indices = range(db.n)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(lambda i: _leave_one_out(i, db), indices))
    else:
        stats = [_leave_one_out(i, db) for i in indices]

    precisions = np.array(
        [
            np.divide(
                s.relevant_retrieved,
                s.retrieved,
                out=np.zeros(db.m + 1),
                where=s.retrieved > 0,
            )
            for s in stats
        ]
    )
    scored = [s for s in stats if s.ap is not None]
    excluded = db.n - len(scored)
    mean_ap = float(np.mean([s.ap for s in scored])) if scored else None

    if scored:
        recall = np.mean([s.relevant_retrieved / s.relevant_total for s in scored], axis=0)
        scored_mask = np.array([s.ap is not None for s in stats])
        curve_precision = precisions[scored_mask].mean(axis=0)
        pr_curve = [(float(r), float(p)) for r, p in zip(recall, curve_precision)]
    else:
        pr_curve = []

    report = EvalReport(
        map=mean_ap,
        precision_at_radius={int(r): float(precisions[:, r].mean()) for r in radii},
        pr_curve=pr_curve,
        queries=db.n,
        excluded_queries=excluded,
        seconds=time.perf_counter() - started,
    )
    if mean_ap is None:
        logger.warning("No query has a relevant item, mAP is undefined", extra={"queries": db.n})
    logger.info(
        "Evaluated retrieval",
        extra={"queries": db.n, "map": mean_ap, "excluded": excluded},
    )
    return report
