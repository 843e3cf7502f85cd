"""Ranking-quality metrics: precision at rank, AP, mAP and Accuracy@K.

All metrics consume binary relevance patterns, never raw scores, so any
rescoring that preserves order preserves every metric. Queries without a
single relevant item are skipped with a warning (their AP is undefined).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import DataError

logger = logging.getLogger(__name__)


class UndefinedAveragePrecision(DataError):
    """AP was requested for a query with zero relevant items."""


@dataclass(frozen=True)
class RelevanceVector:
    """Binary relevance over a ranked list plus the query's relevant-item count.

    ``total_relevant`` counts relevant items in the whole database; it equals
    ``sum(rel)`` when the full database was ranked and may exceed it for
    truncated lists.
    """

    rel: tuple
    total_relevant: int

    def __post_init__(self):
        if any(r not in (0, 1) for r in self.rel):
            raise DataError("relevance values must be 0 or 1")
        if self.total_relevant < sum(self.rel):
            raise DataError(
                f"total_relevant={self.total_relevant} below observed {sum(self.rel)}"
            )

    @classmethod
    def from_flags(cls, flags: Sequence, total_relevant: int | None = None) -> "RelevanceVector":
        rel = tuple(int(bool(f)) for f in flags)
        return cls(rel=rel, total_relevant=sum(rel) if total_relevant is None else total_relevant)

    def __len__(self):
        return len(self.rel)


def precision_at(rank: int, relevance: RelevanceVector) -> float:
    """Fraction of the top ``rank`` items that are relevant."""
    if rank < 1 or rank > len(relevance.rel):
        raise ValueError(f"rank {rank} outside 1..{len(relevance.rel)}")
    return sum(relevance.rel[:rank]) / rank


def average_precision(relevance: RelevanceVector) -> float:
    """Mean of precision values at every relevant position, over total_relevant."""
    if relevance.total_relevant < 1:
        raise UndefinedAveragePrecision("query has no relevant items")
    hits = 0
    acc = 0.0
    for i, r in enumerate(relevance.rel, start=1):
        if r:
            hits += 1
            acc += hits / i
    return acc / relevance.total_relevant


def mean_ap(per_query: Iterable[RelevanceVector]) -> float:
    """Mean AP over queries; queries with no relevant items are skipped."""
    values = []
    skipped = 0
    for relevance in per_query:
        if relevance.total_relevant < 1:
            skipped += 1
            continue
        values.append(average_precision(relevance))
    if skipped:
        logger.warning("mean_ap: skipped %d queries with no relevant items", skipped)
    if not values:
        raise ValueError("mean_ap requires at least one query with a relevant item")
    return sum(values) / len(values)


def acc_at_k(relevance: RelevanceVector, k: int) -> int:
    """1 if any of the first k items is relevant, else 0."""
    if k < 1:
        raise ValueError(f"acc_at_k requires k >= 1, got {k}")
    return int(any(relevance.rel[:k]))


def accuracy_at_k(per_query: Iterable[RelevanceVector], k: int) -> float:
    """Fraction of queries with a relevant item in the top k."""
    if k < 1:
        raise ValueError(f"accuracy_at_k requires k >= 1, got {k}")
    indicators = []
    skipped = 0
    for relevance in per_query:
        if relevance.total_relevant < 1:
            skipped += 1
            continue
        indicators.append(acc_at_k(relevance, k))
    if skipped:
        logger.warning("accuracy_at_k: skipped %d queries with no relevant items", skipped)
    if not indicators:
        raise ValueError("accuracy_at_k requires at least one query with a relevant item")
    return sum(indicators) / len(indicators)
