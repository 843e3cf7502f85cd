"""Database scoring and ranking.

A query is composed once, then every candidate is scored with the fused
global-local similarity and sorted descending with a deterministic id
tie-break. Candidate scoring is vectorized over the database but remains
bit-identical to scoring each candidate alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alignment import FusionWeight, region_descriptors
from .autodiff import Tensor, cosine_similarity, no_grad, reshape
from .errors import ConfigurationError, EmptyDatabaseError
from .features import LEVELS, MultiLevelFeatures
from .model import RetrievalModel


@dataclass
class DatabaseEntry:
    id: str
    label: str
    features: MultiLevelFeatures


@dataclass
class QueryRecord:
    id: str
    label: str
    image_features: MultiLevelFeatures
    text: np.ndarray  # (n, d_T) token embeddings


@dataclass(frozen=True)
class RankedItem:
    candidate_id: str
    score: float
    local_score: float
    global_score: float


@dataclass
class RankedList:
    query_id: str
    entries: list[RankedItem]

    def __len__(self):
        return len(self.entries)

    def candidate_ids(self) -> list[str]:
        return [item.candidate_id for item in self.entries]


def label_positives(query: QueryRecord, database) -> set[str]:
    """Ids of database entries sharing the query's label."""
    return {entry.id for entry in database if entry.label == query.label}


def _pool_levels(stacked: dict) -> dict:
    pooled = {}
    for lvl, maps in stacked.items():
        *lead, h, w, d = maps.shape
        pooled[lvl] = reshape(maps, (*lead, h * w, d)).mean(axis=-2)
    return pooled


def _score_arrays(query: QueryRecord, candidates, model: RetrievalModel, weight: FusionWeight):
    """Fused/local/global score arrays for the query against each candidate."""
    with no_grad():
        composed = model.compose_query(
            {lvl: Tensor(query.image_features[lvl]) for lvl in LEVELS}, Tensor(query.text)
        )
        q_pooled = _pool_levels(composed)
        q_desc = {
            lvl: region_descriptors(composed[lvl], model.mask_generators[lvl]).mean(axis=-2)
            for lvl in LEVELS
        }

        target_maps = {
            lvl: Tensor(np.stack([c.features[lvl] for c in candidates])) for lvl in LEVELS
        }
        t_pooled = _pool_levels(target_maps)
        t_desc = {
            lvl: region_descriptors(target_maps[lvl], model.mask_generators[lvl]).mean(axis=-2)
            for lvl in LEVELS
        }

        s_local = None
        s_global = None
        for lvl in LEVELS:
            lt = cosine_similarity(q_desc[lvl], t_desc[lvl])
            gt = cosine_similarity(q_pooled[lvl], t_pooled[lvl])
            s_local = lt if s_local is None else s_local + lt
            s_global = gt if s_global is None else s_global + gt
        local = s_local.data
        global_ = s_global.data
        fused = weight.beta * local + (1.0 - weight.beta) * global_
    return fused, local, global_


def score(
    query: QueryRecord,
    entry: DatabaseEntry,
    model: RetrievalModel,
    weight: FusionWeight,
) -> tuple[float, float, float]:
    """Fused score plus its local/global components for one candidate."""
    fused, local, global_ = _score_arrays(query, [entry], model, weight)
    return float(fused[0]), float(local[0]), float(global_[0])


def rank(
    query: QueryRecord,
    database,
    model: RetrievalModel,
    weight: FusionWeight,
    exclude_self: bool = True,
) -> RankedList:
    """Score every candidate and sort descending, ties broken by ascending id."""
    database = list(database)
    if not database:
        raise EmptyDatabaseError("cannot rank against an empty database")
    candidates = [e for e in database if not (exclude_self and e.id == query.id)]
    if not candidates:
        raise EmptyDatabaseError(
            f"no candidates remain for query {query.id!r} after self-exclusion"
        )
    seen = set()
    for entry in candidates:
        if entry.id in seen:
            raise ConfigurationError(f"duplicate database id {entry.id!r}")
        seen.add(entry.id)

    fused, local, global_ = _score_arrays(query, candidates, model, weight)
    order = sorted(range(len(candidates)), key=lambda i: (-fused[i], candidates[i].id))
    items = [
        RankedItem(
            candidate_id=candidates[i].id,
            score=float(fused[i]),
            local_score=float(local[i]),
            global_score=float(global_[i]),
        )
        for i in order
    ]
    return RankedList(query_id=query.id, entries=items)


def top_k(ranked: RankedList, k: int) -> RankedList:
    """First min(k, len) entries of a ranked list, order preserved."""
    if k < 1:
        raise ValueError(f"top_k requires k >= 1, got {k}")
    return RankedList(query_id=ranked.query_id, entries=list(ranked.entries[:k]))
