"""Operator surface: prepare, train, evaluate, sparsify, benchmark.

Every command is reproducible from (config, seed) and emits machine-readable
reports: CSV rows plus a JSON sidecar echoing the full configuration. Exit
codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import baselines, evaluation
from .config import RunConfig, apply_overrides, load_config
from .data import (
    RatingMatrix,
    SplitDataset,
    filter_dataset,
    leave_one_out_split,
    load_dataset,
    load_split,
    save_split,
    sparsify,
    write_id_map,
)
from .errors import ConfigError, DataError, FormatError, NumericError
from .model import CHECKPOINT_MAGIC, JointModel, ModelConfig
from .training import train

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _stats_line(matrix: RatingMatrix) -> str:
    return f"{matrix.num_users} {matrix.num_items} {matrix.num_ratings} {matrix.density * 100:.4f}%"


def _resolve_split(config: RunConfig) -> tuple[SplitDataset, str]:
    ds = config.dataset
    if ds.split:
        return load_split(ds.split), os.path.basename(ds.split)
    if ds.path:
        loaded = load_dataset(ds.path, ds.format)
        matrix = filter_dataset(loaded.interactions, ds.min_user, ds.min_item)
        return leave_one_out_split(matrix), os.path.basename(ds.path)
    raise ConfigError("dataset block needs either 'split' or 'path'")


def _load_any_checkpoint(path):
    try:
        with open(path, "rb") as handle:
            magic = handle.read(8)
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc
    if magic == CHECKPOINT_MAGIC:
        return JointModel.load(path)
    if magic == baselines.BASELINE_MAGIC:
        try:
            return baselines.ItemPopModel.load(path)
        except FormatError:
            return baselines.BprMfModel.load(path)
    raise FormatError(f"{path}: not a recognized checkpoint file")


def _write_csv_rows(path, header: str, rows: list[str]) -> None:
    """Append rows, writing the header only when the file is new or empty."""
    need_header = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", encoding="utf-8") as handle:
        if need_header:
            handle.write(header + "\n")
        for row in rows:
            handle.write(row + "\n")


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def cmd_prepare(args) -> int:
    loaded = load_dataset(args.input, args.format)
    matrix = filter_dataset(loaded.interactions, args.min_user, args.min_item)
    print(_stats_line(matrix))
    split = leave_one_out_split(matrix)
    save_split(split, args.out)
    if loaded.user_labels is not None:
        labels = [loaded.user_labels[orig] for orig in matrix.orig_user_ids]
        write_id_map(labels, args.out + ".users.csv")
        labels = [loaded.item_labels[orig] for orig in matrix.orig_item_ids]
        write_id_map(labels, args.out + ".items.csv")
    print(f"wrote split with {split.train.num_ratings} train / {len(split.test)} test events to {args.out}")
    return EXIT_OK


def _config_from_args(args) -> RunConfig:
    config = load_config(args.config)
    if getattr(args, "override", None):
        apply_overrides(config, args.override)
    if getattr(args, "seed", None) is not None:
        config.train.seed = args.seed
        config.validate()
    return config


def cmd_train(args) -> int:
    config = _config_from_args(args)
    split, dataset_name = _resolve_split(config)
    t0 = time.perf_counter()
    if args.algo == "joint":
        model = JointModel.initialize(
            split.train.num_users, split.train.num_items, config.model, seed=config.train.seed
        )
        log = train(model, split, config.train, verbose=not args.quiet)
        model.save(args.out_checkpoint)
        if args.out_log:
            log.to_csv(args.out_log)
        best = f" (best epoch {log.best_epoch})" if log.best_epoch else ""
        print(f"trained {len(log.records)} epochs in {time.perf_counter() - t0:.1f}s{best}")
    elif args.algo == "bprmf":
        bl = config.baseline
        model = baselines.bpr_train(
            split.train,
            factors=bl.factors,
            epochs=bl.epochs,
            learning_rate=bl.learning_rate,
            reg=bl.reg,
            seed=config.train.seed,
        )
        model.save(args.out_checkpoint)
        print(f"trained bprmf ({bl.epochs} epochs) in {time.perf_counter() - t0:.1f}s")
    else:
        model = baselines.ItemPopModel.fit(split.train)
        model.save(args.out_checkpoint)
        print("computed item popularity counts")
    _write_json(args.out_checkpoint + ".json", {"config": config.to_json_dict(), "dataset": dataset_name})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _config_from_args(args)
    split, dataset_name = _resolve_split(config)
    models = [(os.path.splitext(os.path.basename(p))[0], _load_any_checkpoint(p)) for p in args.checkpoint]
    if args.include_itempop:
        models.append(("itempop", baselines.ItemPopModel.fit(split.train)))
    if not models:
        raise ConfigError("nothing to evaluate: pass --checkpoint and/or --include-itempop")

    ev = config.eval
    cohorts = args.cohorts if args.cohorts is not None else ev.cohorts
    workers = args.threads or ev.workers
    all_rows, sidecar = [], []
    for name, model in models:
        report = evaluation.evaluate(
            model,
            split,
            negatives=ev.negatives,
            cutoffs=tuple(ev.cutoffs),
            seed=ev.seed,
            workers=workers,
            collect=args.debug_candidates,
        )
        reports = [report]
        if cohorts:
            reports.extend(
                evaluation.evaluate_cohorts(
                    model, split, cohorts, negatives=ev.negatives,
                    cutoffs=tuple(ev.cutoffs), seed=ev.seed, workers=workers,
                )
            )
        top = max(report.cutoffs)
        print(f"{name}: hr@{top}={report.hr[top]:.4f} ndcg@{top}={report.ndcg[top]:.4f} "
              f"({report.users} users, {report.skipped} skipped)")
        if args.debug_candidates:
            digest = hashlib.sha256()
            for ranked in report.ranked:
                digest.update(np.asarray(ranked.candidates, dtype=np.int64).tobytes())
            print(f"{name}: candidate-set digest {digest.hexdigest()}")
        for r in reports:
            all_rows.extend(r.csv_rows(name, dataset_name))
            sidecar.append({"model": name, **r.to_json_dict()})
    if args.out:
        _write_csv_rows(args.out, "model,dataset,cohort,N,hr,ndcg,users,seconds", all_rows)
    if args.out_json:
        _write_json(args.out_json, {"config": config.to_json_dict(), "reports": sidecar})
    return EXIT_OK


def cmd_sparsify(args) -> int:
    split = load_split(args.split)
    train = split.train
    users, items, ratings, ts = train.triples()
    rows = [users.tolist(), items.tolist(), ratings.tolist(), ts.tolist()]
    for u in sorted(split.test):
        e = split.test[u]
        rows[0].append(e.user)
        rows[1].append(e.item)
        rows[2].append(e.rating)
        rows[3].append(e.timestamp)
    full = RatingMatrix(train.num_users, train.num_items, *rows)
    if args.target_ratings is not None:
        target = args.target_ratings
    elif args.target_density is not None:
        target = round(args.target_density * full.num_users * full.num_items)
    else:
        raise ConfigError("sparsify needs --target-ratings or --target-density")
    thinned = sparsify(full, target, args.seed)
    print(_stats_line(thinned))
    save_split(leave_one_out_split(thinned), args.out)
    print(f"wrote sparsified split to {args.out}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config = _config_from_args(args)
    split, dataset_name = _resolve_split(config)
    model = JointModel.initialize(
        split.train.num_users, split.train.num_items, config.model, seed=config.train.seed
    )
    log = train(model, split, config.train, verbose=not args.quiet)
    if not log.records:
        raise ConfigError("benchmark needs train.epochs >= 1")
    total_train = log.records[-1].seconds
    mean_epoch = total_train / len(log.records)
    report = evaluation.evaluate(
        model, split, negatives=config.eval.negatives,
        cutoffs=tuple(config.eval.cutoffs), seed=config.eval.seed,
    )
    row = (
        f"joint,{dataset_name},{total_train:.3f},{mean_epoch:.3f},"
        f"{report.total_seconds:.3f},{report.mean_rank_seconds:.6f}"
    )
    print("model,dataset,total_train_s,mean_epoch_s,total_predict_s,mean_rank_s")
    print(row)
    if args.out:
        _write_csv_rows(args.out, "model,dataset,total_train_s,mean_epoch_s,total_predict_s,mean_rank_s", [row])
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jointrec", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="load, filter, split and persist a dataset")
    p.add_argument("--input", required=True)
    p.add_argument("--format", required=True, choices=("ml100k", "ml1m", "amazon_csv"))
    p.add_argument("--min-user", type=int, default=0)
    p.add_argument("--min-item", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model and write checkpoint + log")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", metavar="block.key=value")
    p.add_argument("--seed", type=int, help="shorthand for --override train.seed=...")
    p.add_argument("--algo", choices=("joint", "bprmf", "itempop"), default="joint")
    p.add_argument("--out-checkpoint", required=True)
    p.add_argument("--out-log")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="rank held-out items and report HR/NDCG")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", metavar="block.key=value")
    p.add_argument("--checkpoint", action="append", default=[])
    p.add_argument("--include-itempop", action="store_true")
    p.add_argument("--cohorts", type=lambda s: [float(x) for x in s.split(",")])
    p.add_argument("--threads", type=int)
    p.add_argument("--debug-candidates", action="store_true")
    p.add_argument("--out", help="CSV report (append-safe)")
    p.add_argument("--out-json", help="JSON sidecar with config echo")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sparsify", help="thin a prepared split to a target rating count")
    p.add_argument("--split", required=True)
    p.add_argument("--target-ratings", type=int)
    p.add_argument("--target-density", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sparsify)

    p = sub.add_parser("benchmark", help="time training and per-user ranking")
    p.add_argument("--config", required=True)
    p.add_argument("--override", action="append", metavar="block.key=value")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def entrypoint():
    sys.exit(main())
