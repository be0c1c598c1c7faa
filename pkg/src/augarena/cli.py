"""Command-line entry point: ``augarena <train|experiment|augment|losstable|report>``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import policyspace as ps
from .harness import (
    DatasetConfig,
    ExperimentConfig,
    SyntheticSpec,
    load_cifar10,
    load_config,
    run_experiment,
    train_run,
    worker_count,
)
from .imgkernels import StochasticParams, apply_policy
from .model import load_checkpoint
from .ppm import read_ppm, write_ppm
from .report import write_report
from .selector import eval_loss_table

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="augarena", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def overrides(p):
        p.add_argument("--strategy")
        p.add_argument("--multiplicity", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--subset", type=int, help="CIFAR-10 only: first n training images per class")

    p = sub.add_parser("train", help="train one seed")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    overrides(p)
    p.add_argument("--out")

    p = sub.add_parser("experiment", help="train every seed of a config and aggregate")
    p.add_argument("--config", required=True)
    overrides(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("augment", help="apply one policy to a PPM image")
    p.add_argument("--policy", required=True, help="e.g. 'Rotate@L3+Invert@L0'")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("losstable", help="dump a loss table for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True, help="'synthetic', a dataset JSON file, or a CIFAR-10 directory")
    p.add_argument("--policies", default="all", help="'all' or 'subset:k'")
    p.add_argument("--samples", type=int, help="evaluate on the first n training images")
    p.add_argument("--subset", type=int, help="CIFAR-10 only: first n training images per class")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="results table and usage histograms from run directories")
    p.add_argument("--runs", required=True)
    p.add_argument("--out", required=True)
    return parser


def _config(args) -> ExperimentConfig:
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        config = load_config(path)
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"invalid config {path}: {exc}") from exc
    changes = {}
    if args.strategy is not None:
        changes["strategy"] = args.strategy
    if args.multiplicity is not None:
        changes["multiplicity"] = args.multiplicity
    if args.epochs is not None:
        changes["hyperparams"] = dataclasses.replace(config.hyperparams, total_epochs=args.epochs)
    if args.subset is not None:
        if config.dataset.kind != "cifar10":
            raise UsageError("--subset only applies to cifar10 datasets")
        changes["dataset"] = dataclasses.replace(config.dataset, subset=args.subset)
    if changes:
        try:
            config = dataclasses.replace(config, **changes)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return config


def _dataset(spec: str, subset=None):
    if spec == "synthetic":
        return DatasetConfig().build()
    path = Path(spec)
    if path.is_dir():
        return load_cifar10(path, subset)
    if path.is_file():
        d = json.loads(path.read_text())
        if "synthetic" in d:
            d["synthetic"] = SyntheticSpec(**d["synthetic"])
        return DatasetConfig(**d).build()
    raise UsageError(f"dataset not found: {spec}")


def cmd_train(args) -> int:
    config = _config(args)
    seed = args.seed if args.seed is not None else config.seeds[0]
    result = train_run(config, seed, out_dir=args.out)
    print(f"seed {seed}: best test accuracy {result.best_test_acc:.4f} (epoch {result.best_epoch}), status {result.status}")
    return EXIT_OK if result.status == "ok" else EXIT_RUNTIME


def cmd_experiment(args) -> int:
    config = _config(args)
    runset = run_experiment(config, out_dir=args.out)
    print(f"{config.strategy} M={config.multiplicity}: mean best accuracy {runset.mean:.4f} +- {runset.std:.4f} over {len(runset.best_accs)} runs")
    return EXIT_OK if runset.complete else EXIT_RUNTIME


def cmd_augment(args) -> int:
    try:
        policy = ps.Policy.parse(args.policy)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    rng = np.random.default_rng(args.seed)
    sp = (StochasticParams.draw(rng), StochasticParams.draw(rng))
    write_ppm(args.out, apply_policy(read_ppm(args.inp), policy, sp))
    return EXIT_OK


def cmd_losstable(args) -> int:
    params, normalizer = load_checkpoint(args.checkpoint)
    if normalizer is None:
        raise UsageError(f"{args.checkpoint} carries no normalization constants")
    data = _dataset(args.dataset, args.subset)
    if args.policies == "all":
        policies = ps.enumerate_all()
    elif args.policies.startswith("subset:"):
        try:
            k = int(args.policies.split(":", 1)[1])
            policies = ps.sample_subset(np.random.default_rng(args.seed), k)
        except ValueError as exc:
            raise UsageError(f"bad --policies value {args.policies!r}: {exc}") from exc
    else:
        raise UsageError(f"--policies must be 'all' or 'subset:k', got {args.policies!r}")
    n = args.samples or len(data.train_labels)
    table = eval_loss_table(
        params, data.train_images[:n], data.train_labels[:n], policies, normalizer,
        seed=args.seed, threads=worker_count(),
    )
    table.to_csv(args.out)
    return EXIT_OK


def cmd_report(args) -> int:
    table = write_report(args.runs, args.out)
    print(table.render(), end="")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "experiment": cmd_experiment,
    "augment": cmd_augment,
    "losstable": cmd_losstable,
    "report": cmd_report,
}


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"augarena {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError) as exc:
        print(f"augarena {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(cli_main())
