"""Training loop for the composition and alignment parameters.

Batch-softmax contrastive objective with in-batch negatives: each query in a
batch is paired with one sampled same-label target; the batch's targets form
the candidate set and every row must pick out its own positive. Adam with
decoupled weight decay drives the updates; early stopping tracks validation
mAP and hands back the best checkpoint.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .alignment import FusionWeight, region_descriptors
from .autodiff import Tensor, cosine_similarity, log, reshape, softmax, stack
from .errors import ConfigurationError, NumericError
from .features import LEVELS
from .metrics import RelevanceVector, mean_ap
from .model import ModelConfig, RetrievalModel
from .retrieval import label_positives, rank

logger = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    max_epochs: int = 100
    patience: int = 30
    batch_size: int = 16
    temperature: float = 0.1
    seed: int = 0
    beta: float = 0.6
    validation_fraction: float = 0.15

    def __post_init__(self):
        if self.learning_rate <= 0 or self.temperature <= 0:
            raise ConfigurationError("learning_rate and temperature must be positive")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be nonnegative")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ConfigurationError("max_epochs, patience and batch_size must be >= 1")
        if not (0.0 <= self.beta <= 1.0):
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")
        if not (0.0 < self.validation_fraction < 1.0):
            raise ConfigurationError("validation_fraction must lie in (0, 1)")

    def fusion_weight(self) -> FusionWeight:
        return FusionWeight(self.beta)


@dataclass(frozen=True)
class FoldSplit:
    fold_index: int
    train_ids: tuple
    validation_ids: tuple
    test_ids: tuple


def contrastive_loss(sims: Tensor, positive_index, temperature: float) -> Tensor:
    """Mean over rows of -log softmax(sims / temperature)[positive_index]."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    rows, cols = sims.shape
    idx = np.asarray(positive_index, dtype=np.int64)
    if idx.shape != (rows,):
        raise ValueError(f"positive_index must have one entry per row, got shape {idx.shape}")
    if (idx < 0).any() or (idx >= cols).any():
        raise ValueError("positive_index out of range")
    one_hot = np.zeros((rows, cols))
    one_hot[np.arange(rows), idx] = 1.0
    log_probs = log(softmax(sims * (1.0 / temperature), axis=-1))
    return -(log_probs * one_hot).sum(axis=-1).mean()


class AdamOptimizer:
    """Adam with decoupled weight decay over named parameter tensors."""

    def __init__(self, named_params, learning_rate: float, weight_decay: float):
        self.named_params = list(named_params)
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = {name: np.zeros_like(p.data) for name, p in self.named_params}
        self.second_moment = {name: np.zeros_like(p.data) for name, p in self.named_params}

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p in self.named_params:
            grad = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.isfinite(grad).all():
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * grad
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * grad * grad
            m_hat = m / (1.0 - ADAM_BETA1**t)
            v_hat = v / (1.0 - ADAM_BETA2**t)
            p.data = (
                p.data
                - self.learning_rate * (m_hat / (np.sqrt(v_hat) + ADAM_EPS))
                - self.learning_rate * self.weight_decay * p.data
            )


def _spread_merge(sparse: list, dense: list) -> list:
    """Merge two lists, spacing `sparse` items evenly through the result."""
    total = len(sparse) + len(dense)
    if not sparse:
        return list(dense)
    positions = {int((j + 0.5) * total / len(sparse)): j for j in range(len(sparse))}
    merged = []
    dense_iter = iter(dense)
    for slot in range(total):
        if slot in positions:
            merged.append(sparse[positions[slot]])
        else:
            merged.append(next(dense_iter))
    return merged


def stratified_kfold(
    ids,
    labels,
    k: int = 5,
    seed: int = 0,
    validation_fraction: float = 0.15,
    query_flags=None,
) -> list[FoldSplit]:
    """Deterministic stratified k-fold with a validation carve-out.

    Per class, fold test counts differ by at most one; a rolling offset keeps
    overall fold sizes within one of each other too. When ``query_flags``
    marks which ids have a query role, those ids are spread evenly across
    folds within each class and the validation carve draws only from them
    (entry-only ids cannot contribute to validation mAP); without flags every
    id counts as query-capable.
    """
    ids = list(ids)
    labels = list(labels)
    if len(ids) != len(labels):
        raise ConfigurationError("ids and labels must have equal length")
    if len(set(ids)) != len(ids):
        raise ConfigurationError("ids must be unique")
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if query_flags is None:
        query_flags = [True] * len(ids)
    query_flags = list(query_flags)
    if len(query_flags) != len(ids):
        raise ConfigurationError("query_flags must align with ids")
    is_query = dict(zip(ids, (bool(f) for f in query_flags)))

    by_class: dict = {}
    for item_id, label in zip(ids, labels):
        by_class.setdefault(label, []).append(item_id)
    for label, members in sorted(by_class.items()):
        if len(members) < k:
            raise ConfigurationError(
                f"class {label!r} has {len(members)} members, fewer than k={k}"
            )

    rng = np.random.default_rng([seed, 0x5F1D])
    fold_members: list[list] = [[] for _ in range(k)]
    offset = 0
    for label in sorted(by_class):
        queries = sorted(m for m in by_class[label] if is_query[m])
        others = sorted(m for m in by_class[label] if not is_query[m])
        rng.shuffle(queries)
        rng.shuffle(others)
        members = _spread_merge(queries, others)
        quotient, remainder = divmod(len(members), k)
        start = 0
        for j in range(k):
            fold = (offset + j) % k
            size = quotient + (1 if j < remainder else 0)
            fold_members[fold].extend(members[start : start + size])
            start += size
        offset = (offset + remainder) % k

    label_of = dict(zip(ids, labels))
    splits = []
    for fold_index in range(k):
        test_ids = sorted(fold_members[fold_index])
        pool = sorted(set(ids) - set(test_ids))
        val_rng = np.random.default_rng([seed, 0xA11D, fold_index])
        pool_by_class: dict = {}
        for item_id in pool:
            if is_query[item_id]:
                pool_by_class.setdefault(label_of[item_id], []).append(item_id)
        validation_ids = []
        for label in sorted(pool_by_class):
            members = sorted(pool_by_class[label])
            val_rng.shuffle(members)
            count = int(round(validation_fraction * len(members)))
            count = max(1, count) if len(members) > 1 else 0
            count = min(count, len(members) - 1)
            validation_ids.extend(members[:count])
        validation_set = set(validation_ids)
        train_ids = [i for i in pool if i not in validation_set]
        splits.append(
            FoldSplit(
                fold_index=fold_index,
                train_ids=tuple(sorted(train_ids)),
                validation_ids=tuple(sorted(validation_ids)),
                test_ids=tuple(test_ids),
            )
        )
    return splits


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_map: float
    is_best: bool

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "validation_map": self.validation_map,
            "is_best": self.is_best,
        }


@dataclass
class TrainResult:
    model: RetrievalModel
    log: list
    best_epoch: int
    best_validation_map: float


def _batch_similarity(model, queries, positives, weight: FusionWeight):
    """(B, B) fused-score matrix between composed queries and batch targets."""
    composed_per_query = []
    for q in queries:
        composed_per_query.append(
            model.compose_query(
                {lvl: Tensor(q.image_features[lvl]) for lvl in LEVELS}, Tensor(q.text)
            )
        )
    s_local = None
    s_global = None
    for lvl in LEVELS:
        h, w, d = composed_per_query[0][lvl].shape
        q_maps = stack([c[lvl] for c in composed_per_query])  # (B, h, w, d)
        t_maps = Tensor(np.stack([p.features[lvl] for p in positives]))

        q_pooled = reshape(q_maps, (len(queries), h * w, d)).mean(axis=-2)
        t_pooled = reshape(t_maps, (len(positives), h * w, d)).mean(axis=-2)
        q_desc = region_descriptors(q_maps, model.mask_generators[lvl]).mean(axis=-2)
        t_desc = region_descriptors(t_maps, model.mask_generators[lvl]).mean(axis=-2)

        local_term = cosine_similarity(
            reshape(q_desc, (len(queries), 1, d)), reshape(t_desc, (1, len(positives), d))
        )
        global_term = cosine_similarity(
            reshape(q_pooled, (len(queries), 1, d)), reshape(t_pooled, (1, len(positives), d))
        )
        s_local = local_term if s_local is None else s_local + local_term
        s_global = global_term if s_global is None else s_global + global_term
    return s_local * weight.beta + s_global * (1.0 - weight.beta)


def _validation_map(model, queries, database, weight, exclude_self=True):
    rels = []
    for q in queries:
        positives = label_positives(q, database)
        ranked = rank(q, database, model, weight, exclude_self=exclude_self)
        flags = [item.candidate_id in positives for item in ranked.entries]
        rels.append(RelevanceVector.from_flags(flags))
    return mean_ap(rels)


def train_fold(
    bundle,
    fold: FoldSplit,
    config: TrainConfig,
    model: RetrievalModel | None = None,
    model_config: ModelConfig | None = None,
) -> TrainResult:
    """Train on one fold's train split, early-stopping on validation mAP."""
    train_set = set(fold.train_ids)
    val_set = set(fold.validation_ids)
    database = [e for e in bundle.entries if e.id in train_set]
    train_queries = [q for q in bundle.queries if q.id in train_set]
    val_queries = [q for q in bundle.queries if q.id in val_set]
    if not database:
        raise ConfigurationError(f"fold {fold.fold_index}: no database entries in train split")
    if not train_queries:
        raise ConfigurationError(f"fold {fold.fold_index}: no queries in train split")
    if not val_queries:
        raise ConfigurationError(f"fold {fold.fold_index}: no validation queries")

    if model is None:
        if model_config is None:
            model_config = ModelConfig(
                level_dims=bundle.level_dims, text_dim=bundle.text_dim
            )
        model = RetrievalModel.initialize(
            model_config, seed=[config.seed, 0x1417, fold.fold_index]
        )

    by_label: dict = {}
    for entry in database:
        by_label.setdefault(entry.label, []).append(entry)
    for label in by_label:
        by_label[label].sort(key=lambda e: e.id)
    trainable = [q for q in train_queries if q.label in by_label]
    dropped = len(train_queries) - len(trainable)
    if dropped:
        logger.warning(
            "fold %d: dropped %d training queries with no same-label entry",
            fold.fold_index,
            dropped,
        )
    if not trainable:
        raise ConfigurationError(f"fold {fold.fold_index}: no trainable queries")

    weight = config.fusion_weight()
    optimizer = AdamOptimizer(
        model.named_parameters(), config.learning_rate, config.weight_decay
    )
    rng = np.random.default_rng([config.seed, 0x7E41, fold.fold_index])

    best_map = -np.inf
    best_epoch = 0
    best_state = model.state_dict()
    epochs_without_improvement = 0
    log_records: list[EpochRecord] = []

    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(trainable))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            queries = [trainable[i] for i in batch_idx]
            positives = [
                by_label[q.label][rng.integers(len(by_label[q.label]))] for q in queries
            ]
            sims = _batch_similarity(model, queries, positives, weight)
            loss = contrastive_loss(sims, np.arange(len(queries)), config.temperature)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(loss.item())
        optimizer.zero_grad()

        val_map = _validation_map(model, val_queries, database, weight)
        improved = val_map > best_map
        if improved:
            best_map = val_map
            best_epoch = epoch
            best_state = model.state_dict()
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
        log_records.append(
            EpochRecord(
                epoch=epoch,
                train_loss=float(np.mean(losses)),
                validation_map=val_map,
                is_best=improved,
            )
        )
        if epochs_without_improvement >= config.patience:
            break

    model.load_state_dict(best_state)
    return TrainResult(
        model=model,
        log=log_records,
        best_epoch=best_epoch,
        best_validation_map=best_map,
    )
