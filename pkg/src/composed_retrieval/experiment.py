"""Experiment orchestration: cross-validated train/evaluate runs with reports.

Each fold trains on its train split, ranks the fold's test queries against
the train-split database, and reports mAP plus Accuracy@K for both the
trained model and its untouched initialization. Fold metrics aggregate to
mean +/- sample standard deviation. Every run writes a manifest (config
hash, seed, format versions) sufficient to reproduce it; no artifact
contains wall-clock state, so identical configs produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .alignment import FusionWeight
from .bundle import BUNDLE_VERSION, CHECKPOINT_VERSION, FeatureBundle, load_bundle, save_checkpoint
from .errors import ConfigurationError, DataError, RetrievalEngineError
from .metrics import RelevanceVector, accuracy_at_k, mean_ap
from .model import RetrievalModel
from .retrieval import label_positives, rank
from .trainer import FoldSplit, TrainConfig, stratified_kfold, train_fold

logger = logging.getLogger(__name__)

DEFAULT_ACC_CUTOFFS = (1, 2, 4)


@dataclass(frozen=True)
class ExperimentConfig:
    bundle_path: str
    output_dir: str
    seed: int = 0
    folds: int = 5
    region_count: int = 4
    acc_cutoffs: tuple = DEFAULT_ACC_CUTOFFS
    exclude_self: bool = True
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        cutoffs = tuple(int(k) for k in self.acc_cutoffs)
        if not cutoffs or any(k < 1 for k in cutoffs) or list(cutoffs) != sorted(set(cutoffs)):
            raise ConfigurationError(
                f"acc_cutoffs must be positive and strictly ascending, got {self.acc_cutoffs}"
            )
        object.__setattr__(self, "acc_cutoffs", cutoffs)
        if self.folds < 2:
            raise ConfigurationError(f"folds must be >= 2, got {self.folds}")
        if self.region_count < 1:
            raise ConfigurationError(f"region_count must be >= 1, got {self.region_count}")

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["acc_cutoffs"] = list(self.acc_cutoffs)
        return raw

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        train_raw = raw.pop("train", {})
        known = {f for f in TrainConfig.__dataclass_fields__}
        unknown = set(train_raw) - known
        if unknown:
            raise ConfigurationError(f"unknown train config keys: {sorted(unknown)}")
        train = TrainConfig(**train_raw)
        known = {f for f in cls.__dataclass_fields__} - {"train"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown experiment config keys: {sorted(unknown)}")
        if "acc_cutoffs" in raw:
            raw["acc_cutoffs"] = tuple(raw["acc_cutoffs"])
        return cls(train=train, **raw)

    def config_hash(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class EvalResult:
    mean_ap: float
    accuracy: dict  # cutoff -> value
    ranked_lists: list

    def metric_dict(self) -> dict:
        out = {"map": self.mean_ap}
        out.update({f"acc@{k}": v for k, v in self.accuracy.items()})
        return out


@dataclass
class FoldReport:
    fold_index: int
    trained: EvalResult
    untrained: EvalResult
    best_epoch: int
    best_validation_map: float
    epochs_run: int

    def to_dict(self) -> dict:
        return {
            "fold_index": self.fold_index,
            "trained": self.trained.metric_dict(),
            "untrained": self.untrained.metric_dict(),
            "best_epoch": self.best_epoch,
            "best_validation_map": self.best_validation_map,
            "epochs_run": self.epochs_run,
        }


@dataclass
class ExperimentReport:
    fold_reports: list
    aggregate: dict  # metric -> {"mean": x, "std": s, "per_fold": [...]}

    def to_dict(self) -> dict:
        return {
            "folds": [fr.to_dict() for fr in self.fold_reports],
            "aggregate": self.aggregate,
        }


def aggregate_mean_std(values) -> tuple[float, float]:
    """Mean and sample standard deviation (ddof=1; std 0 for a single value)."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot aggregate an empty sequence")
    mean = float(arr.mean())
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return mean, std


def evaluate_model(
    model: RetrievalModel,
    queries,
    database,
    weight: FusionWeight,
    acc_cutoffs=DEFAULT_ACC_CUTOFFS,
    exclude_self: bool = True,
) -> EvalResult:
    """Rank every query against the database and compute mAP / Accuracy@K."""
    if not queries:
        raise ConfigurationError("evaluate_model needs at least one query")
    rels = []
    ranked_lists = []
    for query in queries:
        positives = label_positives(query, database)
        ranked = rank(query, database, model, weight, exclude_self=exclude_self)
        flags = [item.candidate_id in positives for item in ranked.entries]
        rels.append(RelevanceVector.from_flags(flags))
        ranked_lists.append(ranked)
    accuracy = {k: accuracy_at_k(rels, k) for k in acc_cutoffs}
    return EvalResult(mean_ap=mean_ap(rels), accuracy=accuracy, ranked_lists=ranked_lists)


def run_fold(bundle: FeatureBundle, fold: FoldSplit, config: ExperimentConfig) -> tuple:
    """Train one fold and evaluate trained and untrained models on its test split."""
    train_set = set(fold.train_ids)
    test_set = set(fold.test_ids)
    database = [e for e in bundle.entries if e.id in train_set]
    test_queries = [q for q in bundle.queries if q.id in test_set]
    if not test_queries:
        raise ConfigurationError(f"fold {fold.fold_index} has no test queries")

    model_config = bundle.model_config(config.region_count)
    model = RetrievalModel.initialize(
        model_config, seed=[config.train.seed, 0x1417, fold.fold_index]
    )
    weight = config.train.fusion_weight()

    untrained = evaluate_model(
        model, test_queries, database, weight, config.acc_cutoffs, config.exclude_self
    )
    result = train_fold(bundle, fold, config.train, model=model)
    trained = evaluate_model(
        result.model, test_queries, database, weight, config.acc_cutoffs, config.exclude_self
    )
    report = FoldReport(
        fold_index=fold.fold_index,
        trained=trained,
        untrained=untrained,
        best_epoch=result.best_epoch,
        best_validation_map=result.best_validation_map,
        epochs_run=len(result.log),
    )
    return report, result


def _aggregate(fold_reports, acc_cutoffs) -> dict:
    aggregate = {}
    for side in ("trained", "untrained"):
        for metric in ["map"] + [f"acc@{k}" for k in acc_cutoffs]:
            values = [getattr(fr, side).metric_dict()[metric] for fr in fold_reports]
            mean, std = aggregate_mean_std(values)
            aggregate[f"{side}_{metric}"] = {"mean": mean, "std": std, "per_fold": values}
    return aggregate


def run_experiment(config: ExperimentConfig, bundle: FeatureBundle | None = None) -> ExperimentReport:
    """Full cross-validation: split, train each fold, evaluate, write artifacts."""
    if bundle is None:
        bundle = load_bundle(config.bundle_path)
    id_labels = bundle.id_labels()
    ids = sorted(id_labels)
    labels = [id_labels[i] for i in ids]
    query_ids = {q.id for q in bundle.queries}
    folds = stratified_kfold(
        ids,
        labels,
        k=config.folds,
        seed=config.seed,
        validation_fraction=config.train.validation_fraction,
        query_flags=[i in query_ids for i in ids],
    )

    out_dir = config.output_dir
    os.makedirs(out_dir, exist_ok=True)
    fold_reports = []
    for fold in folds:
        try:
            report, result = run_fold(bundle, fold, config)
        except RetrievalEngineError as exc:
            raise type(exc)(f"fold {fold.fold_index}: {exc}") from exc
        fold_reports.append(report)

        fold_dir = os.path.join(out_dir, f"fold{fold.fold_index}")
        os.makedirs(fold_dir, exist_ok=True)
        save_checkpoint(
            result.model,
            os.path.join(fold_dir, "checkpoint.circ"),
            extra={
                "fold_index": fold.fold_index,
                "best_epoch": result.best_epoch,
                "best_validation_map": result.best_validation_map,
                "train_config": asdict(config.train),
            },
        )
        with open(os.path.join(fold_dir, "train_log.jsonl"), "w") as fh:
            for record in result.log:
                fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
        database = [e for e in bundle.entries if e.id in set(fold.train_ids)]
        label_of = {e.id: e.label for e in database}
        write_ranked_file(
            os.path.join(fold_dir, "ranked.tsv"),
            report.trained.ranked_lists,
            label_of,
            {q.id: q.label for q in bundle.queries},
        )
        with open(os.path.join(fold_dir, "report.json"), "w") as fh:
            json.dump(report.to_dict(), fh, sort_keys=True, indent=2)

    aggregate = _aggregate(fold_reports, config.acc_cutoffs)
    experiment = ExperimentReport(fold_reports=fold_reports, aggregate=aggregate)

    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(experiment.to_dict(), fh, sort_keys=True, indent=2)
    with open(os.path.join(out_dir, "report.txt"), "w") as fh:
        fh.write(format_report_table(experiment, config.acc_cutoffs))
    manifest = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "bundle_format_version": BUNDLE_VERSION,
        "checkpoint_format_version": CHECKPOINT_VERSION,
        "package_version": __version__,
        "bundle_provenance": bundle.provenance,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return experiment


def format_report_table(report: ExperimentReport, acc_cutoffs=DEFAULT_ACC_CUTOFFS) -> str:
    """Human-readable per-fold and mean +/- std table."""
    lines = []
    fold_ids = [fr.fold_index for fr in report.fold_reports]
    header = f"{'metric':<22}" + "".join(f"fold{i:<6}" for i in fold_ids) + "mean +/- std"
    lines.append(header)
    lines.append("-" * len(header))
    for side in ("trained", "untrained"):
        for metric in ["map"] + [f"acc@{k}" for k in acc_cutoffs]:
            entry = report.aggregate[f"{side}_{metric}"]
            row = f"{side + ' ' + metric:<22}"
            row += "".join(f"{v:<10.4f}" for v in entry["per_fold"])
            row += f"{entry['mean']:.4f} +/- {entry['std']:.4f}"
            lines.append(row)
    return "\n".join(lines) + "\n"


# -- ranked-list files --------------------------------------------------------

RANKED_HEADER = [
    "query_id",
    "rank",
    "candidate_id",
    "score",
    "score_local",
    "score_global",
    "candidate_label",
    "is_relevant",
]


def write_ranked_file(path, ranked_lists, candidate_labels: dict, query_labels: dict) -> None:
    """Line-delimited ranked records; floats keep full precision."""
    with open(path, "w") as fh:
        fh.write("\t".join(RANKED_HEADER) + "\n")
        for ranked in ranked_lists:
            q_label = query_labels[ranked.query_id]
            for position, item in enumerate(ranked.entries, start=1):
                c_label = candidate_labels[item.candidate_id]
                fh.write(
                    "\t".join(
                        [
                            ranked.query_id,
                            str(position),
                            item.candidate_id,
                            format(item.score, ".17g"),
                            format(item.local_score, ".17g"),
                            format(item.global_score, ".17g"),
                            c_label,
                            "1" if c_label == q_label else "0",
                        ]
                    )
                    + "\n"
                )


def read_ranked_file(path) -> list[tuple[str, list]]:
    """Parse a ranked file back into (query_id, [(candidate_id, relevant), ...])."""
    with open(path) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0].split("\t") != RANKED_HEADER:
        raise DataError(f"{path}: missing or unexpected ranked-file header")
    grouped: dict = {}
    order = []
    for line_no, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != len(RANKED_HEADER):
            raise DataError(f"{path}:{line_no}: expected {len(RANKED_HEADER)} columns")
        query_id, rank_str, candidate_id, *_rest, relevant = parts
        if relevant not in ("0", "1"):
            raise DataError(f"{path}:{line_no}: is_relevant must be 0 or 1")
        if query_id not in grouped:
            grouped[query_id] = []
            order.append(query_id)
        expected_rank = len(grouped[query_id]) + 1
        if int(rank_str) != expected_rank:
            raise DataError(
                f"{path}:{line_no}: rank {rank_str} out of order (expected {expected_rank})"
            )
        grouped[query_id].append((candidate_id, int(relevant)))
    return [(qid, grouped[qid]) for qid in order]


def metrics_from_ranked_files(paths, acc_cutoffs=DEFAULT_ACC_CUTOFFS) -> dict:
    """Recompute mAP and Accuracy@K from exported ranked-list files."""
    rels = []
    for path in paths:
        for _, records in read_ranked_file(path):
            rels.append(RelevanceVector.from_flags([r for _, r in records]))
    if not rels:
        raise DataError("no ranked records found")
    out = {"map": mean_ap(rels), "queries": len(rels)}
    out.update({f"acc@{k}": accuracy_at_k(rels, k) for k in acc_cutoffs})
    return out
