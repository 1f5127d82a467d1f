"""Pool-based active learning driven by the error-ratio stopping rule.

One acquisition per step: pick the pool point maximising the learner's
acquisition score, label it, update the posterior, turn the KL pair between
consecutive posteriors into a stability radius and feed it to one stopping
controller per threshold.  Hyperparameters are fitted on the initial labeled
set only and then frozen, so every posterior in a run shares one prior.
"""
from __future__ import annotations

import csv
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from . import bayes_linear as bl
from . import gp
from .stability import (
    Decision,
    KlPair,
    StoppingState,
    error_bound_width,
    error_ratios,
    step_stopping,
)

logger = logging.getLogger(__name__)

TRACE_FIELDS = ("t", "acquired_index", "kl_forward", "kl_backward", "r_t", "lambda_t", "test_error")
PROB_CLIP = 1e-12


class Task(str, Enum):
    REGRESSION = "regression"
    CLASSIFICATION = "classification"


class Profile(str, Enum):
    BRR = "brr"
    BLR = "blr"
    GPR = "gpr"

    @property
    def task(self) -> Task:
        return Task.CLASSIFICATION if self is Profile.BLR else Task.REGRESSION


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    task: Task
    feature_names: Optional[list] = None
    dropped_rows: int = 0

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        self.task = Task(self.task)
        if self.features.shape[0] != self.targets.size:
            raise DataError("features and targets differ in length")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DataError("dataset contains non-finite values")
        if self.task is Task.CLASSIFICATION and not np.all(
            (self.targets == 0) | (self.targets == 1)
        ):
            raise DataError("classification targets must be 0 or 1")

    @property
    def n(self) -> int:
        return self.targets.size

    @property
    def dims(self) -> int:
        return self.features.shape[1]


def _parse_row(row):
    try:
        values = [float(c) for c in row]
    except ValueError:
        return None
    if not values or not all(math.isfinite(v) for v in values):
        return None
    return values


def load_csv(path, task) -> Dataset:
    """Read a numeric CSV whose last column is the target.

    A non-numeric first row is taken as a header.  Rows that fail to parse,
    have missing cells or the wrong width are dropped and counted.
    """
    task = Task(task)
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    names = None
    if _parse_row(rows[0]) is None:
        names = [c.strip() for c in rows[0][:-1]]
        rows = rows[1:]
    width = len(names) + 1 if names is not None else None
    parsed, dropped = [], 0
    for row in rows:
        values = _parse_row(row)
        if values is None or len(values) < 2:
            dropped += 1
            continue
        if width is None:
            width = len(values)
        if len(values) != width:
            dropped += 1
            continue
        parsed.append(values)
    if dropped:
        logger.warning("%s: dropped %d unparseable row(s)", path, dropped)
    if not parsed:
        raise DataError(f"{path}: no usable rows")
    data = np.array(parsed)
    return Dataset(data[:, :-1], data[:, -1], task, names, dropped)


@dataclass(frozen=True)
class FeatureStats:
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray


def normalize(dataset: Dataset):
    """Standardise every feature column to mean 0, population std 1.

    Constant columns are centred, get std 1 and are flagged in the returned
    :class:`FeatureStats`.
    """
    if dataset.n < 2:
        raise DataError("need at least two rows to normalise")
    X = dataset.features
    mean = X.mean(axis=0)
    centred = X - mean
    std = np.sqrt(np.mean(centred * centred, axis=0))
    constant = std == 0
    std = np.where(constant, 1.0, std)
    if np.any(constant):
        logger.warning("constant feature column(s): %s", np.flatnonzero(constant).tolist())
    out = Dataset(centred / std, dataset.targets.copy(), dataset.task,
                  dataset.feature_names, dataset.dropped_rows)
    return out, FeatureStats(mean, std, constant)


@dataclass
class LabeledPool:
    """Row bookkeeping: labeled rows in acquisition order, the candidate pool, the test split."""

    labeled_indices: list
    pool_indices: list
    test_indices: list
    rng_seed: int
    n_initial: int = 0

    def __post_init__(self):
        if not self.n_initial:
            self.n_initial = len(self.labeled_indices)
        sets = [set(self.labeled_indices), set(self.pool_indices), set(self.test_indices)]
        if sum(map(len, sets)) != len(set().union(*sets)):
            raise DataError("labeled, pool and test indices must be disjoint")

    def copy(self) -> "LabeledPool":
        return LabeledPool(list(self.labeled_indices), list(self.pool_indices),
                           list(self.test_indices), self.rng_seed, self.n_initial)


def split(dataset: Dataset, n0: int, test_size: int, seed: int) -> LabeledPool:
    """Seeded shuffle: the first ``test_size`` rows are the test split, the next ``n0`` the initial set."""
    if n0 < 1:
        raise DataError("n0 must be at least 1")
    if test_size < 0 or n0 + test_size > dataset.n:
        raise DataError(
            f"n0 + test_size = {n0 + test_size} exceeds the {dataset.n} available rows"
        )
    perm = np.random.default_rng(seed).permutation(dataset.n)
    test = sorted(int(i) for i in perm[:test_size])
    initial = [int(i) for i in perm[test_size:test_size + n0]]
    pool = sorted(int(i) for i in perm[test_size + n0:])
    return LabeledPool(initial, pool, test, seed)


class Learner:
    """Interface shared by the three learner profiles."""

    profile: Profile

    def start(self, X0, y0, X_domain):
        raise NotImplementedError

    def scores(self, X):
        raise NotImplementedError

    def update(self, x, y) -> KlPair:
        raise NotImplementedError

    def test_error(self, X, y) -> float:
        raise NotImplementedError


class BrrLearner(Learner):
    profile = Profile.BRR

    def __init__(self, centers_per_dim: int = 10):
        self.centers_per_dim = centers_per_dim

    def start(self, X0, y0, X_domain):
        self.basis = bl.RbfBasis.from_data(X_domain, self.centers_per_dim)
        self.hyper = bl.brr_update_hyper(self.basis, bl.BrrHyper(1.0, 1.0), (X0, y0))
        if self.hyper.alpha >= bl.HYPER_MAX:
            logger.warning(
                "evidence fit drove the prior precision to its cap; the initial set "
                "carries no signal the basis can resolve"
            )
        Phi = bl.design_matrix(self.basis, X0)
        self._precision = self.hyper.alpha * np.eye(self.basis.size) + self.hyper.beta * Phi @ Phi.T
        self._rhs = self.hyper.beta * (Phi @ np.asarray(y0, dtype=float))
        self.posterior = bl._posterior_from_normal_eq(self._precision, self._rhs)

    def scores(self, X):
        return bl.predictive_variance(self.posterior, self.basis, X)

    def update(self, x, y):
        psi = bl.design_matrix(self.basis, np.reshape(x, (1, -1)))[:, 0]
        self._precision = self._precision + self.hyper.beta * np.outer(psi, psi)
        self._rhs = self._rhs + self.hyper.beta * psi * float(y)
        old, self.posterior = self.posterior, bl._posterior_from_normal_eq(self._precision, self._rhs)
        return KlPair(bl.gaussian_kl(self.posterior, old), bl.gaussian_kl(old, self.posterior))

    def test_error(self, X, y):
        Phi = bl.design_matrix(self.basis, X)
        mean = Phi.T @ self.posterior.mean
        var = self.posterior.quad_variance(Phi)
        return float(np.mean((np.asarray(y) - mean) ** 2 + var))


class BlrLearner(Learner):
    profile = Profile.BLR

    def __init__(self, alpha: float = 1.0, centers_per_dim: int = 10):
        self.alpha = alpha
        self.centers_per_dim = centers_per_dim

    def start(self, X0, y0, X_domain):
        self.basis = bl.RbfBasis.from_data(X_domain, self.centers_per_dim)
        self._X = [np.asarray(r, dtype=float) for r in np.atleast_2d(X0)]
        self._y = [float(v) for v in y0]
        self.posterior = bl.blr_laplace_posterior(self.basis, self.alpha, self._data())

    def _data(self):
        if not self._y:
            return np.empty((0, self.basis.dims)), np.empty(0)
        return np.vstack(self._X), np.array(self._y)

    def scores(self, X):
        return bl.binary_entropy(bl.predict_proba(self.posterior, self.basis, X))

    def update(self, x, y):
        self._X.append(np.asarray(x, dtype=float).ravel())
        self._y.append(float(y))
        old = self.posterior
        self.posterior = bl.blr_laplace_posterior(self.basis, self.alpha, self._data(), w0=old.mean)
        return KlPair(bl.gaussian_kl(self.posterior, old), bl.gaussian_kl(old, self.posterior))

    def test_error(self, X, y):
        p = np.clip(bl.predict_proba(self.posterior, self.basis, X), PROB_CLIP, 1.0 - PROB_CLIP)
        y = np.asarray(y, dtype=float)
        return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p)))


class GprLearner(Learner):
    profile = Profile.GPR

    def __init__(self, grid: Optional[Sequence[gp.GpHyper]] = None):
        self.grid = grid

    def start(self, X0, y0, X_domain):
        self.hyper = gp.gp_fit_hyper(X0, y0, self.grid)
        self.state = gp.GpState.build(self.hyper, X0, y0, dims=np.shape(X_domain)[1])

    def scores(self, X):
        return self.state.predict(X)[1]

    def update(self, x, y):
        pair = KlPair(
            gp.gp_incremental_kl_forward(self.state, x, y),
            gp.gp_incremental_kl_backward(self.state, x, y),
        )
        self.state = gp.gp_extend(self.state, x, y)
        return pair

    def test_error(self, X, y):
        mean, var = self.state.predict(X)
        return float(np.mean((np.asarray(y) - mean) ** 2 + var))


def make_learner(profile) -> Learner:
    profile = Profile(profile)
    return {Profile.BRR: BrrLearner, Profile.BLR: BlrLearner, Profile.GPR: GprLearner}[profile]()


def test_error(learner: Learner, X_test, y_test) -> float:
    """Expected test loss under the learner's current posterior.

    Regression: mean of ``(y - mu(x))**2 + var(x)``.  Classification: mean
    cross-entropy of the plug-in probability, clipped to [1e-12, 1 - 1e-12].
    """
    if len(y_test) == 0:
        raise DataError("test split is empty")
    return learner.test_error(X_test, y_test)


# keep pytest from collecting the helper above when imported into test modules
test_error.__test__ = False


@dataclass(frozen=True)
class StoppingConfig:
    thresholds: tuple = (0.05,)
    m: int = 10
    min_steps: int = 10

    def __post_init__(self):
        thr = tuple(sorted((float(t) for t in self.thresholds), reverse=True))
        if not thr:
            raise ValueError("at least one threshold is required")
        object.__setattr__(self, "thresholds", thr)

    def states(self) -> dict:
        return {t: StoppingState(t, self.m, self.min_steps) for t in self.thresholds}


@dataclass
class TraceRecord:
    t: int
    acquired_index: int
    kl_forward: float
    kl_backward: float
    r_t: float
    lambda_t: Optional[float]
    test_error: float
    stopped_flags: dict = field(default_factory=dict)


def _check_profile(dataset: Dataset, profile: Profile):
    if profile.task is not dataset.task:
        raise DataError(f"profile {profile.value} needs a {profile.task.value} dataset")


def _run(dataset, pool, profile, stopping, budget, choose, stop_on_threshold, learner):
    profile = Profile(profile)
    _check_profile(dataset, profile)
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    pool = pool.copy()
    X, y = dataset.features, dataset.targets
    if budget == 0:
        return []
    learner = learner if learner is not None else make_learner(profile)
    domain = pool.labeled_indices + pool.pool_indices
    learner.start(X[pool.labeled_indices], y[pool.labeled_indices], X[domain])
    X_test, y_test = X[pool.test_indices], y[pool.test_indices]
    states = stopping.states()
    stop_steps: dict = {}
    records = []
    for t in range(1, budget + 1):
        if not pool.pool_indices:
            logger.info("pool exhausted after %d acquisitions", t - 1)
            break
        pos = choose(learner, X[pool.pool_indices])
        row = pool.pool_indices.pop(pos)
        pool.labeled_indices.append(row)
        pair = learner.update(X[row], y[row])
        for thr, state in states.items():
            if thr in stop_steps:
                continue
            state, decision, _ = step_stopping(state, pair)
            states[thr] = state
            if decision is Decision.STOP:
                stop_steps[thr] = t
        err = learner.test_error(X_test, y_test) if len(y_test) else math.nan
        records.append(
            TraceRecord(
                t=t,
                acquired_index=row,
                kl_forward=pair.forward,
                kl_backward=pair.backward,
                r_t=error_bound_width(pair),
                lambda_t=None,
                test_error=err,
                stopped_flags={thr: thr in stop_steps for thr in stopping.thresholds},
            )
        )
        if stop_on_threshold and len(stop_steps) == len(states):
            break
    lambdas = error_ratios([r.r_t for r in records], stopping.m)
    for rec, lam in zip(records, lambdas):
        rec.lambda_t = lam
    return records


def _choose_argmax(learner, X_pool):
    return int(np.argmax(learner.scores(X_pool)))


def run_active_learning(
    dataset: Dataset,
    pool: LabeledPool,
    profile,
    stopping: StoppingConfig = StoppingConfig(),
    budget: int = 500,
    stop_on_threshold: bool = True,
    learner: Optional[Learner] = None,
) -> list:
    """Run pool-based active learning and return one :class:`TraceRecord` per acquisition.

    Stops once every threshold in ``stopping`` has fired (unless
    ``stop_on_threshold`` is false), the budget is spent, or the pool is empty.
    ``pool`` is not modified.
    """
    return _run(dataset, pool, profile, stopping, budget, _choose_argmax, stop_on_threshold, learner)


def run_random_baseline(
    dataset: Dataset,
    pool: LabeledPool,
    profile,
    budget: int = 500,
    seed: int = 0,
    stopping: StoppingConfig = StoppingConfig(),
    stop_on_threshold: bool = False,
) -> list:
    """Same loop with uniformly random acquisitions from a seeded generator."""
    rng = np.random.default_rng(seed)

    def choose(_learner, X_pool):
        return int(rng.integers(X_pool.shape[0]))

    return _run(dataset, pool, profile, stopping, budget, choose, stop_on_threshold, None)


def _fmt(value) -> str:
    if value is None:
        return ""
    return format(float(value), ".17g")


def _atomic_write(path, write: Callable) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_trace_csv(records: Sequence[TraceRecord], path) -> None:
    """Write the trace atomically (temp file + rename), 17 significant digits."""

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_FIELDS)
        for r in records:
            w.writerow([
                r.t, r.acquired_index, _fmt(r.kl_forward), _fmt(r.kl_backward),
                _fmt(r.r_t), _fmt(r.lambda_t), _fmt(r.test_error),
            ])

    _atomic_write(path, write)


def read_trace_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_FIELDS:
            raise DataError(f"{path}: expected header {','.join(TRACE_FIELDS)}")
        out = []
        for row in reader:
            out.append(TraceRecord(
                t=int(row["t"]),
                acquired_index=int(row["acquired_index"]),
                kl_forward=float(row["kl_forward"]),
                kl_backward=float(row["kl_backward"]),
                r_t=float(row["r_t"]),
                lambda_t=float(row["lambda_t"]) if row["lambda_t"] else None,
                test_error=float(row["test_error"]),
            ))
    return out


def noisy_sine(n: int, noise: float = 0.1, seed: int = 0, low: float = -10.0, high: float = 10.0) -> Dataset:
    """Synthetic 1-D regression data ``y = sin(x) + noise``."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(low, high, size=n)
    y = np.sin(x) + noise * rng.standard_normal(n)
    return Dataset(x.reshape(-1, 1), y, Task.REGRESSION)
