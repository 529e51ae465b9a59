"""
cli.py — Command-line experiment runner for ccpdml

Usage::

    ccpdml run --config preset:synth --out runs/synth --seed 1
    ccpdml compare runs/baseline runs/ccp
    ccpdml eval --embeddings runs/ccp/embeddings.csv

``run`` writes ``trace.csv``, ``summary.json`` and ``embeddings.csv`` into
the output directory. Exit status is 0 on success, 3 when training hits a
non-finite value, and 2 for every other ccpdml error (configuration, input
files, IDX format, classes too small to split, embeddings without a valid
query).
"""

import argparse
import json
import logging
import os
import sys
import time

import numpy as np

from .ccp import run_ccp
from .config import config_items, load_config
from .data import split, synth_blobs
from .errors import CCPError, NumericError
from .loads import load_mnist
from .metrics import evaluate, induced_epsilon, mean_generalized_contrastive, violation_rate
from .net import forward, save_checkpoint
from .reporting import (
    EMBEDDINGS_FILE,
    SUMMARY_FILE,
    TRACE_FILE,
    compare_summaries,
    read_embeddings,
    read_summary,
    write_embeddings,
    write_summary,
    write_trace,
)

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3


def build_dataset(config):
    """Load or generate the dataset of ``config`` and split off validation samples."""
    data = config.data
    if data.source == "mnist":
        dataset = load_mnist(data.mnist_dir)
    else:
        dataset = synth_blobs(data.n_classes, data.per_class, data.input_dim, data.spread, config.seed,
                              test_per_class=data.test_per_class)
    return split(dataset, data.val_fraction, config.seed)


def _split_names(dataset):
    names = np.full(len(dataset), "", dtype=object)
    names[dataset.train_idx] = "train"
    names[dataset.val_idx] = "val"
    names[dataset.test_idx] = "test"
    return names


def run(config):
    """Train as configured and write the run artifacts; returns the summary."""
    started = time.perf_counter()
    dataset = build_dataset(config)
    result = run_ccp(config, dataset)
    out = config.out_dir
    os.makedirs(out, exist_ok=True)

    write_trace(result.trace, os.path.join(out, TRACE_FILE))
    write_embeddings(forward(result.net, dataset.inputs), dataset.labels, os.path.join(out, EMBEDDINGS_FILE),
                     split=_split_names(dataset))
    save_checkpoint(result.net, os.path.join(out, "model.ccpn"))
    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "dataset": {
            "name": dataset.name,
            "n_classes": dataset.n_classes,
            "n_train": int(dataset.train_idx.size),
            "n_val": int(dataset.val_idx.size),
            "n_test": int(dataset.test_idx.size),
        },
        "best_val": result.best_val.to_dict(),
        "test": result.test.to_dict() if result.test is not None else None,
        "projections": len(result.projections),
        "total_steps": result.total_steps,
        "stop_reason": result.stop_reason,
        "wall_time_s": time.perf_counter() - started,
        "config": config_items(config),
    }
    write_summary(summary, os.path.join(out, SUMMARY_FILE))
    return summary


def _command_run(args):
    config = load_config(args.config, overrides={"seed": args.seed, "out_dir": args.out})
    summary = run(config)
    final = summary["test"] or summary["best_val"]
    print(f"MAP@R {final['map_at_r']:.4f}  P@1 {final['p_at_1']:.4f}  -> {config.out_dir}")
    return EXIT_OK


def _command_compare(args):
    delta = compare_summaries(read_summary(args.a), read_summary(args.b))
    print(json.dumps(delta, indent=2))
    return EXIT_OK


def _command_eval(args):
    embeddings, labels = read_embeddings(args.embeddings)
    report = evaluate(embeddings, labels)
    report.violation_rate = violation_rate(embeddings, labels, args.beta)
    report.alpha, report.beta = args.alpha, args.beta
    report.induced_epsilon = induced_epsilon(mean_generalized_contrastive(embeddings, labels, args.alpha, args.beta),
                                             args.alpha)
    print(json.dumps(report.to_dict(), indent=2))
    return EXIT_OK


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="ccpdml",
        description="Chance-constrained proxy training for deep metric learning",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log every training step")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="Train and write trace, summary and embeddings")
    run_parser.add_argument("--config", required=True, help="Config file or preset:<name>")
    run_parser.add_argument("--out", default=None, help="Output directory (overrides out_dir)")
    run_parser.add_argument("--seed", type=int, default=None, help="Seed (overrides seed)")
    run_parser.set_defaults(handler=_command_run)

    compare_parser = commands.add_parser("compare", help="Metric deltas between two runs (b - a)")
    compare_parser.add_argument("a", help="Run directory or summary.json")
    compare_parser.add_argument("b", help="Run directory or summary.json")
    compare_parser.set_defaults(handler=_command_compare)

    eval_parser = commands.add_parser("eval", help="Retrieval metrics of an embeddings dump")
    eval_parser.add_argument("--embeddings", required=True, help="embeddings.csv written by run")
    eval_parser.add_argument("--alpha", type=float, default=0.1, help="Margin of the induced epsilon")
    eval_parser.add_argument("--beta", type=float, default=0.5, help="Distance threshold of the violation rate")
    eval_parser.set_defaults(handler=_command_eval)
    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except NumericError as exc:
        print(f"ccpdml: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CCPError, FileNotFoundError) as exc:
        print(f"ccpdml: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
