"""Experiment harness: running-minimum filtering, correlation, and on-disk artifacts."""
from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import (
    DataError,
    Profile,
    StoppingConfig,
    Task,
    _atomic_write,
    _fmt,
    load_csv,
    normalize,
    run_active_learning,
    split,
    write_trace_csv,
)

logger = logging.getLogger(__name__)

DEFAULT_THRESHOLDS = {
    Profile.BRR: (0.02, 0.015, 0.01),
    Profile.BLR: (0.3, 0.2, 0.1),
    Profile.GPR: (0.05, 0.04, 0.03),
}

TRACE_NAME = "trace.csv"
SUMMARY_NAME = "stop_summary.csv"
REPORT_NAME = "correlation.txt"
INSUFFICIENT = "insufficient data"


class ExperimentError(Exception):
    """Validation or I/O failure; ``exit_code`` is what the CLI returns."""

    def __init__(self, message: str, exit_code: int = 1):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass(frozen=True)
class FilteredSequences:
    E_hat: tuple
    Lambda_hat: tuple
    steps: tuple = ()

    def __len__(self):
        return len(self.Lambda_hat)


def filter_running_min(trace) -> FilteredSequences:
    """Keep the steps whose error ratio sets a new strict running minimum.

    Steps without an error ratio are skipped; the first defined one is
    always kept.  Each kept ratio is paired with that step's test error.
    """
    E, L, steps = [], [], []
    best = math.inf
    for rec in trace:
        lam = rec.lambda_t
        if lam is None:
            continue
        if lam < best:
            best = lam
            E.append(rec.test_error)
            L.append(lam)
            steps.append(rec.t)
    if not L:
        raise ValueError("trace has no error ratios")
    return FilteredSequences(tuple(E), tuple(L), tuple(steps))


def pearson_correlation(seqs: FilteredSequences) -> float:
    """Sample Pearson coefficient between ``E_hat`` and ``Lambda_hat``."""
    x = np.asarray(seqs.Lambda_hat, dtype=float)
    y = np.asarray(seqs.E_hat, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two points for a correlation")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation is undefined for a constant sequence")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def correlation_report(trace):
    """``(pearson, n_points)``; pearson is ``None`` when there is too little data."""
    try:
        seqs = filter_running_min(trace)
    except ValueError:
        return None, 0
    try:
        return pearson_correlation(seqs), len(seqs)
    except ValueError:
        return None, len(seqs)


def write_report(path, pearson: Optional[float], n_points: int) -> None:
    def write(fh):
        value = INSUFFICIENT if pearson is None else _fmt(pearson)
        fh.write(f"pearson={value}\n")
        fh.write(f"n_points={n_points}\n")

    _atomic_write(path, write)


def read_report(path) -> dict:
    out = {}
    with open(path) as fh:
        for line in fh:
            if "=" in line:
                key, value = line.rstrip("\n").split("=", 1)
                out[key] = value
    return out


def stop_summary(trace, thresholds: Sequence[float]) -> list:
    """Per threshold: ``(threshold, stop_step or None, test error at stop or None)``."""
    rows = []
    for thr in thresholds:
        hit = next((r for r in trace if r.stopped_flags.get(thr)), None)
        rows.append((thr, hit.t if hit else None, hit.test_error if hit else None))
    return rows


def write_stop_summary(path, rows) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("threshold", "stop_step", "test_error_at_stop"))
        for thr, step, err in rows:
            w.writerow((_fmt(thr), "" if step is None else step, _fmt(err)))

    _atomic_write(path, write)


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str
    task: Task
    learner_profile: Profile
    thresholds: tuple = ()
    m: int = 10
    min_steps: int = 10
    n0: int = 10
    test_size: Optional[int] = None
    budget: int = 500
    seed: int = 0
    output_dir: str = "results"
    stop_on_threshold: bool = True
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        profile = Profile(self.learner_profile)
        task = Task(self.task) if self.task is not None else profile.task
        object.__setattr__(self, "learner_profile", profile)
        object.__setattr__(self, "task", task)
        if profile.task is not task:
            raise ValueError(f"model {profile.value} cannot be used for {task.value}")
        thr = self.thresholds or DEFAULT_THRESHOLDS[profile]
        thr = tuple(sorted((float(t) for t in thr), reverse=True))
        for t in thr:
            if not 0.0 < t <= 1.0:
                raise ValueError(f"threshold {t!r} is outside (0, 1]")
        object.__setattr__(self, "thresholds", thr)
        for name in ("m", "min_steps", "n0"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.budget < 0:
            raise ValueError("budget must be nonnegative")
        if self.test_size is not None and self.test_size < 1:
            raise ValueError("test_size must be at least 1")


def run_experiment(config: ExperimentConfig) -> dict:
    """Run one experiment and write trace, stop summary and correlation report.

    Returns the output paths plus the correlation.  Raises
    :class:`ExperimentError` on failure after removing anything it wrote.
    """
    if not os.path.isfile(config.dataset_path):
        raise ExperimentError(f"dataset not found: {config.dataset_path}", exit_code=2)
    try:
        dataset = load_csv(config.dataset_path, config.task)
        dataset, _ = normalize(dataset)
        test_size = config.test_size if config.test_size is not None else max(1, dataset.n // 5)
        pool = split(dataset, config.n0, test_size, config.seed)
    except (DataError, ValueError) as exc:
        raise ExperimentError(str(exc), exit_code=2) from exc

    os.makedirs(config.output_dir, exist_ok=True)
    paths = {
        "trace": os.path.join(config.output_dir, TRACE_NAME),
        "summary": os.path.join(config.output_dir, SUMMARY_NAME),
        "report": os.path.join(config.output_dir, REPORT_NAME),
    }
    try:
        stopping = StoppingConfig(config.thresholds, config.m, config.min_steps)
        trace = run_active_learning(
            dataset, pool, config.learner_profile, stopping, config.budget,
            stop_on_threshold=config.stop_on_threshold,
        )
        write_trace_csv(trace, paths["trace"])
        write_stop_summary(paths["summary"], stop_summary(trace, config.thresholds))
        pearson, n_points = correlation_report(trace)
        write_report(paths["report"], pearson, n_points)
    except Exception as exc:
        for p in paths.values():
            if os.path.exists(p):
                os.unlink(p)
        if isinstance(exc, ExperimentError):
            raise
        raise ExperimentError(f"experiment failed: {exc}") from exc
    logger.info("wrote %d trace rows to %s", len(trace), paths["trace"])
    return {**paths, "pearson": pearson, "n_points": n_points, "steps": len(trace)}
