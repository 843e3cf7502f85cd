"""Command-line surface: synth, train, cv, rank, metrics, gradcheck.

Exit codes: 0 success, 2 configuration error, 3 data/format error,
4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

from .bundle import load_bundle, load_checkpoint, save_bundle, save_checkpoint
from .checks import DEFAULT_CHECK_DIMS, run_gradient_suite
from .errors import (
    BundleFormatError,
    ConfigurationError,
    DataError,
    EmptyDatabaseError,
    NumericError,
    RetrievalEngineError,
)
from .experiment import (
    DEFAULT_ACC_CUTOFFS,
    ExperimentConfig,
    metrics_from_ranked_files,
    run_experiment,
    run_fold,
    write_ranked_file,
)
from .alignment import FusionWeight
from .retrieval import rank as rank_query
from .synthetic import DEFAULT_LEVEL_DIMS, generate_local_cue_bundle, generate_synthetic
from .trainer import TrainConfig, stratified_kfold

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def parse_level_dims(text: str) -> dict:
    """Parse 'L=8x8x16,M=4x4x32,H=2x2x64' into a level-dims mapping."""
    dims = {}
    try:
        for part in text.split(","):
            level, spec = part.split("=")
            h, w, d = (int(x) for x in spec.lower().split("x"))
            dims[level.strip()] = (h, w, d)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse level dims {text!r}: {exc}") from exc
    return dims


def parse_cutoffs(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse cutoffs {text!r}") from exc


def _add_train_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lr", type=float, help="learning rate (default 1e-4)")
    parser.add_argument("--weight-decay", type=float, help="decoupled weight decay (default 1e-5)")
    parser.add_argument("--epochs", type=int, help="max epochs (default 100)")
    parser.add_argument("--patience", type=int, help="early-stopping patience (default 30)")
    parser.add_argument("--batch-size", type=int, help="contrastive batch size (default 16)")
    parser.add_argument("--temperature", type=float, help="softmax temperature (default 0.1)")
    parser.add_argument("--beta", type=float, help="local/global fusion weight (default 0.6)")
    parser.add_argument("--validation-fraction", type=float, help="validation carve-out (default 0.15)")


def _train_config(args, seed: int) -> TrainConfig:
    overrides = {
        "learning_rate": args.lr,
        "weight_decay": args.weight_decay,
        "max_epochs": args.epochs,
        "patience": args.patience,
        "batch_size": args.batch_size,
        "temperature": args.temperature,
        "beta": args.beta,
        "validation_fraction": args.validation_fraction,
    }
    kwargs = {k: v for k, v in overrides.items() if v is not None}
    return TrainConfig(seed=seed, **kwargs)


def _experiment_config(args) -> ExperimentConfig:
    raw = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigurationError(f"{args.config}: invalid JSON ({exc})") from exc
    base = ExperimentConfig.from_dict(raw) if raw else None

    def pick(flag, key, default):
        if flag is not None:
            return flag
        if base is not None:
            return getattr(base, key)
        return default

    if pick(args.bundle, "bundle_path", None) is None:
        raise ConfigurationError("a bundle path is required (--bundle or config file)")
    if pick(args.out, "output_dir", None) is None:
        raise ConfigurationError("an output directory is required (--out or config file)")

    seed = pick(args.seed, "seed", 0)
    base_train = base.train if base is not None else TrainConfig()
    train_kwargs = asdict(base_train)
    train_kwargs["seed"] = seed
    for flag, key in (
        (args.lr, "learning_rate"),
        (args.weight_decay, "weight_decay"),
        (args.epochs, "max_epochs"),
        (args.patience, "patience"),
        (args.batch_size, "batch_size"),
        (args.temperature, "temperature"),
        (args.beta, "beta"),
        (args.validation_fraction, "validation_fraction"),
    ):
        if flag is not None:
            train_kwargs[key] = flag
    return ExperimentConfig(
        bundle_path=pick(args.bundle, "bundle_path", None),
        output_dir=pick(args.out, "output_dir", None),
        seed=seed,
        folds=pick(args.folds, "folds", 5),
        region_count=pick(args.regions, "region_count", 4),
        acc_cutoffs=pick(
            parse_cutoffs(args.cutoffs) if args.cutoffs else None,
            "acc_cutoffs",
            DEFAULT_ACC_CUTOFFS,
        ),
        exclude_self=False if args.include_self else pick(None, "exclude_self", True),
        train=TrainConfig(**train_kwargs),
    )


def cmd_synth(args) -> int:
    level_dims = parse_level_dims(args.level_dims) if args.level_dims else dict(DEFAULT_LEVEL_DIMS)
    common = dict(
        seed=args.seed,
        classes=args.classes,
        entries_per_class=args.entries_per_class,
        queries_per_class=args.queries_per_class,
        level_dims=level_dims,
        text_dim=args.text_dim,
        noise=args.noise,
        tokens_per_query=args.tokens_per_query,
    )
    if args.local_cue:
        bundle = generate_local_cue_bundle(cue_strength=args.cue_strength, **common)
    else:
        bundle = generate_synthetic(**common)
    save_bundle(bundle, args.out)
    print(
        f"wrote {args.out}: {len(bundle.entries)} entries, "
        f"{len(bundle.queries)} queries, {len(bundle.class_names)} classes"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    bundle = load_bundle(args.bundle)
    config = ExperimentConfig(
        bundle_path=args.bundle,
        output_dir=args.out,
        seed=args.seed,
        folds=args.folds,
        region_count=args.regions,
        exclude_self=not args.include_self,
        train=_train_config(args, args.seed),
    )
    id_labels = bundle.id_labels()
    ids = sorted(id_labels)
    labels = [id_labels[i] for i in ids]
    query_ids = {q.id for q in bundle.queries}
    folds = stratified_kfold(
        ids, labels, k=config.folds, seed=config.seed,
        validation_fraction=config.train.validation_fraction,
        query_flags=[i in query_ids for i in ids],
    )
    if not (0 <= args.fold_index < len(folds)):
        raise ConfigurationError(f"fold index {args.fold_index} outside 0..{len(folds) - 1}")
    fold = folds[args.fold_index]
    report, result = run_fold(bundle, fold, config)

    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(
        result.model,
        os.path.join(args.out, "checkpoint.circ"),
        extra={
            "fold_index": fold.fold_index,
            "best_epoch": result.best_epoch,
            "best_validation_map": result.best_validation_map,
            "train_config": asdict(config.train),
        },
    )
    with open(os.path.join(args.out, "train_log.jsonl"), "w") as fh:
        for record in result.log:
            fh.write(json.dumps(record.to_dict(), sort_keys=True) + "\n")
    with open(os.path.join(args.out, "report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
    print(
        f"fold {fold.fold_index}: best epoch {result.best_epoch}, "
        f"validation mAP {result.best_validation_map:.4f}, "
        f"test mAP {report.trained.mean_ap:.4f}"
    )
    return EXIT_OK


def cmd_cv(args) -> int:
    config = _experiment_config(args)
    report = run_experiment(config)
    print(open(os.path.join(config.output_dir, "report.txt")).read(), end="")
    trained = report.aggregate["trained_map"]
    print(f"trained mAP {trained['mean']:.4f} +/- {trained['std']:.4f}")
    return EXIT_OK


def cmd_rank(args) -> int:
    bundle = load_bundle(args.bundle)
    model, _extra = load_checkpoint(args.checkpoint)
    weight = FusionWeight(args.beta)
    wanted = set(args.queries.split(",")) if args.queries else None
    queries = [q for q in bundle.queries if wanted is None or q.id in wanted]
    if wanted:
        missing = wanted - {q.id for q in queries}
        if missing:
            raise DataError(f"queries not present in bundle: {sorted(missing)}")
    if not queries:
        raise DataError("no queries selected")
    ranked_lists = [
        rank_query(q, bundle.entries, model, weight, exclude_self=not args.include_self)
        for q in queries
    ]
    label_of = {e.id: e.label for e in bundle.entries}
    write_ranked_file(args.out, ranked_lists, label_of, {q.id: q.label for q in bundle.queries})
    print(f"wrote {args.out}: {len(ranked_lists)} ranked lists over {len(bundle.entries)} candidates")
    return EXIT_OK


def cmd_metrics(args) -> int:
    cutoffs = parse_cutoffs(args.cutoffs) if args.cutoffs else DEFAULT_ACC_CUTOFFS
    result = metrics_from_ranked_files(args.ranked, acc_cutoffs=cutoffs)
    for key in ["queries", "map"] + [f"acc@{k}" for k in cutoffs]:
        value = result[key]
        print(f"{key}: {value:.6f}" if isinstance(value, float) else f"{key}: {value}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(result, fh, sort_keys=True, indent=2)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    level_dims = parse_level_dims(args.level_dims) if args.level_dims else dict(DEFAULT_CHECK_DIMS)
    results = run_gradient_suite(
        level_dims=level_dims,
        text_dim=args.text_dim,
        region_count=args.regions,
        seed=args.seed,
        eps=args.eps,
        max_coords_per_tensor=args.samples,
    )
    runtime = results.pop("_runtime_seconds")
    worst = max(results.values())
    for name in sorted(results):
        status = "ok" if results[name] < args.threshold else "FAIL"
        print(f"{name:<20} max relative error {results[name]:.3e}  [{status}]")
    print(f"runtime {runtime:.2f}s, worst {worst:.3e}, threshold {args.threshold:.1e}")
    if worst >= args.threshold:
        raise NumericError(f"gradient check failed: {worst:.3e} >= {args.threshold:.1e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cir",
        description="Composed image+text retrieval: data generation, training, "
        "ranking and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic feature bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--entries-per-class", type=int, default=60)
    p.add_argument("--queries-per-class", type=int, default=15)
    p.add_argument("--noise", type=float, default=0.25)
    p.add_argument("--text-dim", type=int, default=16)
    p.add_argument("--tokens-per-query", type=int, default=8)
    p.add_argument("--level-dims", help="e.g. L=8x8x16,M=4x4x32,H=2x2x64")
    p.add_argument("--local-cue", action="store_true",
                   help="hide class signal in one spatial quadrant")
    p.add_argument("--cue-strength", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a single cross-validation fold")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--fold-index", type=int, default=0)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regions", type=int, default=4, help="region masks per level")
    p.add_argument("--include-self", action="store_true",
                   help="keep a query's own id among candidates")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="run the full cross-validation experiment")
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--bundle")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--regions", type=int)
    p.add_argument("--cutoffs", help="comma-separated Accuracy@K cutoffs, default 1,2,4")
    p.add_argument("--include-self", action="store_true")
    _add_train_flags(p)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("rank", help="rank bundle queries with a trained checkpoint")
    p.add_argument("--bundle", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--beta", type=float, default=0.6)
    p.add_argument("--queries", help="comma-separated query ids (default: all)")
    p.add_argument("--include-self", action="store_true")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("metrics", help="recompute metrics from ranked-list files")
    p.add_argument("ranked", nargs="+", help="ranked .tsv files")
    p.add_argument("--cutoffs", help="comma-separated cutoffs, default 1,2,4")
    p.add_argument("--out", help="optional JSON output path")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("gradcheck", help="finite-difference check of every trainable path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=32,
                   help="coordinates sampled per tensor (0 = exhaustive)")
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--threshold", type=float, default=1e-4)
    p.add_argument("--text-dim", type=int, default=16)
    p.add_argument("--regions", type=int, default=4)
    p.add_argument("--level-dims", help="default L=8x8x16,M=4x4x32,H=2x2x64")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "samples", None) == 0:
        args.samples = None
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BundleFormatError, DataError, EmptyDatabaseError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except RetrievalEngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
