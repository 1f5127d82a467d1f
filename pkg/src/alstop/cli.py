"""Command-line entry point: ``alstop run|eval|radius|bdnn``."""
from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from .bdnn import bdnn_kl_bound, bdnn_kl_bound_simplified, load_bdnn_posterior
from .engine import DataError, Profile, Task, _fmt, read_trace_csv
from .evaluation import (
    ExperimentConfig,
    ExperimentError,
    correlation_report,
    run_experiment,
    write_report,
    INSUFFICIENT,
)
from .stability import KlPair, error_bound_width


def _thresholds(text: str) -> tuple:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("at least one threshold is required")
    for v in values:
        if not 0.0 < v <= 1.0:
            raise argparse.ArgumentTypeError(f"threshold {v!r} is outside (0, 1]")
    return tuple(sorted(values, reverse=True))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text!r}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0.0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alstop",
        description="Error-stability stopping for Bayesian active learning.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one active-learning experiment")
    run.add_argument("--data", required=True, help="CSV file; last column is the target")
    run.add_argument("--task", choices=[t.value for t in Task])
    run.add_argument("--model", required=True, choices=[p.value for p in Profile])
    run.add_argument("--thresholds", type=_thresholds,
                     help="comma-separated values in (0, 1]; defaults depend on --model")
    run.add_argument("--m", type=_positive_int, default=10)
    run.add_argument("--min-steps", type=_positive_int, default=10)
    run.add_argument("--n0", type=_positive_int, default=10)
    run.add_argument("--test-size", type=_positive_int, help="default: a fifth of the rows")
    run.add_argument("--budget", type=_nonneg_int, default=500)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--run-to-budget", action="store_true",
                     help="keep acquiring after every threshold has fired")

    ev = sub.add_parser("eval", help="recompute the correlation report from a trace CSV")
    ev.add_argument("trace")
    ev.add_argument("--out", help="also write the report to this file")

    rad = sub.add_parser("radius", help="stability radius width for one KL pair")
    rad.add_argument("forward", type=_nonneg_float)
    rad.add_argument("backward", type=_nonneg_float)
    rad.add_argument("--gamma", type=float, help="normaliser; prints the error ratio too")

    bd = sub.add_parser("bdnn", help="KL bound between two dropout-network parameter files")
    bd.add_argument("p")
    bd.add_argument("q")
    bd.add_argument("--simplified", action="store_true")
    return parser


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    return build_parser().parse_args(argv)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    return ExperimentConfig(
        dataset_path=args.data,
        task=args.task,
        learner_profile=args.model,
        thresholds=args.thresholds or (),
        m=args.m,
        min_steps=args.min_steps,
        n0=args.n0,
        test_size=args.test_size,
        budget=args.budget,
        seed=args.seed,
        output_dir=args.out,
        stop_on_threshold=not args.run_to_budget,
    )


def cli_parse(argv: Sequence[str]):
    """Parse ``argv``; ``run`` yields an :class:`ExperimentConfig`, other commands the namespace."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "run":
        return args
    try:
        return config_from_args(args)
    except ValueError as exc:
        parser.error(str(exc))


def _cmd_run(config: ExperimentConfig) -> int:
    result = run_experiment(config)
    pearson = INSUFFICIENT if result["pearson"] is None else _fmt(result["pearson"])
    print(f"steps={result['steps']}")
    print(f"pearson={pearson}")
    print(f"n_points={result['n_points']}")
    print(f"trace={result['trace']}")
    return 0


def _cmd_eval(args) -> int:
    try:
        trace = read_trace_csv(args.trace)
    except FileNotFoundError:
        raise ExperimentError(f"trace not found: {args.trace}", exit_code=2)
    except (DataError, ValueError) as exc:
        raise ExperimentError(str(exc), exit_code=2)
    pearson, n_points = correlation_report(trace)
    print(f"pearson={INSUFFICIENT if pearson is None else _fmt(pearson)}")
    print(f"n_points={n_points}")
    if args.out:
        write_report(args.out, pearson, n_points)
    return 0


def _cmd_radius(args) -> int:
    r = error_bound_width(KlPair(args.forward, args.backward))
    print(f"r={_fmt(r)}")
    if args.gamma is not None:
        if not args.gamma > 0.0:
            raise ExperimentError("--gamma must be positive", exit_code=2)
        print(f"lambda={_fmt(r / args.gamma)}")
    return 0


def _cmd_bdnn(args) -> int:
    try:
        p = load_bdnn_posterior(args.p)
        q = load_bdnn_posterior(args.q)
        bound = (bdnn_kl_bound_simplified if args.simplified else bdnn_kl_bound)(p, q)
    except FileNotFoundError as exc:
        raise ExperimentError(f"file not found: {exc.filename}", exit_code=2)
    except ValueError as exc:
        raise ExperimentError(str(exc), exit_code=2)
    print(f"kl_bound={_fmt(bound)}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "run":
            try:
                config = config_from_args(args)
            except ValueError as exc:
                parser.error(str(exc))
            return _cmd_run(config)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "radius":
            return _cmd_radius(args)
        return _cmd_bdnn(args)
    except ExperimentError as exc:
        print(f"alstop: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
