"""Gaussian process regression with a squared-exponential kernel.

Hyperparameters are picked once by grid search over the exact log marginal
likelihood and then frozen; the closed-form KLs between successive posteriors
below only hold when both posteriors share the same prior.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist

logger = logging.getLogger(__name__)

JITTER = 1e-10


@dataclass(frozen=True)
class GpHyper:
    lengthscale: float
    noise_precision: float

    def __post_init__(self):
        for name in ("lengthscale", "noise_precision"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")

    @property
    def noise_variance(self) -> float:
        return 1.0 / self.noise_precision


def default_grid(dims: int) -> list:
    scale = math.sqrt(dims)
    return [
        GpHyper(l * scale, b)
        for l in (0.1, 0.2, 0.5, 1.0, 2.0, 5.0)
        for b in (0.1, 1.0, 10.0, 100.0)
    ]


def rbf_kernel(A: np.ndarray, B: np.ndarray, lengthscale: float) -> np.ndarray:
    sq = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return np.exp(-0.5 * sq / lengthscale**2)


def _as_inputs(X, dims: Optional[int] = None) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1) if dims in (None, 1) else X.reshape(1, -1)
    return X


def _noisy_cholesky(K: np.ndarray, noise_var: float) -> np.ndarray:
    n = K.shape[0]
    A = K + noise_var * np.eye(n)
    try:
        return linalg.cholesky(A, lower=True)
    except linalg.LinAlgError:
        logger.warning("Cholesky failed; retrying with %.0e diagonal jitter", JITTER)
        return linalg.cholesky(A + JITTER * np.eye(n), lower=True)


@dataclass(frozen=True)
class GpState:
    """Posterior of a zero-mean GP given ``(X, y)``.

    ``chol`` is the lower factor of ``K + noise_var I`` and ``alpha_vec``
    solves ``(K + noise_var I) a = y``.
    """

    hyper: GpHyper
    X: np.ndarray
    y: np.ndarray
    chol: np.ndarray
    alpha_vec: np.ndarray

    @classmethod
    def build(cls, hyper: GpHyper, X, y, dims: Optional[int] = None) -> "GpState":
        y = np.asarray(y, dtype=float).ravel()
        X = _as_inputs(X, dims)
        if y.size == 0:
            d = dims if dims is not None else (X.shape[1] if X.ndim == 2 and X.shape[1] else 1)
            return cls.empty(hyper, d)
        if X.shape[0] != y.size:
            raise ValueError("inputs and targets differ in length")
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        K = rbf_kernel(X, X, hyper.lengthscale)
        L = _noisy_cholesky(K, hyper.noise_variance)
        return cls(hyper, X, y, L, linalg.cho_solve((L, True), y))

    @classmethod
    def empty(cls, hyper: GpHyper, dims: int) -> "GpState":
        return cls(hyper, np.empty((0, dims)), np.empty(0), np.empty((0, 0)), np.empty(0))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def dims(self) -> int:
        return self.X.shape[1]

    def predict(self, Xs) -> tuple:
        """Posterior mean and variance of f at each row of ``Xs``."""
        Xs = _as_inputs(Xs, self.dims)
        if Xs.shape[1] != self.dims:
            raise ValueError(f"inputs have dimension {Xs.shape[1]}, state has {self.dims}")
        if self.n == 0:
            return np.zeros(Xs.shape[0]), np.ones(Xs.shape[0])
        Ks = rbf_kernel(self.X, Xs, self.hyper.lengthscale)
        mean = Ks.T @ self.alpha_vec
        V = linalg.solve_triangular(self.chol, Ks, lower=True)
        var = 1.0 - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)


def gp_posterior(state: GpState, x) -> tuple:
    """Predictive ``(mean, variance)`` of f at a single input."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    mean, var = state.predict(x)
    return float(mean[0]), float(var[0])


def _kl_inputs(state: GpState, x, y):
    y = float(y)
    if not math.isfinite(y):
        raise ValueError("target must be finite")
    mu, var = gp_posterior(state, x)
    return mu, var, y - mu


def incremental_kl_backward(var: float, resid: float, beta: float) -> float:
    """KL[q_{t-1} || q_t] from the old predictive variance/residual at the new point."""
    bs = beta * var
    kl = 0.5 * bs - 0.5 * math.log1p(bs) + 0.5 * bs / (var + 1.0 / beta) * resid * resid
    return max(kl, 0.0)


def incremental_kl_forward(var: float, resid: float, beta: float) -> float:
    """KL[q_t || q_{t-1}] from the old predictive variance/residual at the new point."""
    s = var + 1.0 / beta
    kl = 0.5 * math.log1p(beta * var) - 0.5 * var / s + 0.5 * var * resid * resid / (s * s)
    return max(kl, 0.0)


def gp_incremental_kl_backward(state_before: GpState, x, y) -> float:
    """KL[q(f | S_{t-1}) || q(f | S_t)] when ``(x, y)`` is added to ``state_before``."""
    _, var, resid = _kl_inputs(state_before, x, y)
    return incremental_kl_backward(var, resid, state_before.hyper.noise_precision)


def gp_incremental_kl_forward(state_before: GpState, x, y) -> float:
    """KL[q(f | S_t) || q(f | S_{t-1})] when ``(x, y)`` is added to ``state_before``."""
    _, var, resid = _kl_inputs(state_before, x, y)
    return incremental_kl_forward(var, resid, state_before.hyper.noise_precision)


def gp_extend(state: GpState, x, y) -> GpState:
    """Add one observation by appending a row to the Cholesky factor."""
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != state.dims:
        raise ValueError(f"input has dimension {x.shape[1]}, state has {state.dims}")
    y = float(y)
    if not math.isfinite(y):
        raise ValueError("target must be finite")
    X = np.vstack([state.X, x])
    ys = np.append(state.y, y)
    noise = state.hyper.noise_variance
    n = state.n
    if n == 0:
        L = np.array([[math.sqrt(1.0 + noise)]])
    else:
        k = rbf_kernel(state.X, x, state.hyper.lengthscale)[:, 0]
        l = linalg.solve_triangular(state.chol, k, lower=True)
        d2 = 1.0 + noise - float(l @ l)
        if not d2 > 0.0:
            logger.warning("rank-one Cholesky update lost definiteness; rebuilding")
            return GpState.build(state.hyper, X, ys)
        L = np.zeros((n + 1, n + 1))
        L[:n, :n] = state.chol
        L[n, :n] = l
        L[n, n] = math.sqrt(d2)
    return GpState(state.hyper, X, ys, L, linalg.cho_solve((L, True), ys))


def gp_log_marginal(X, y, hyper: GpHyper) -> float:
    """Exact log evidence ``log N(y | 0, K + noise_var I)``."""
    X = _as_inputs(X)
    y = np.asarray(y, dtype=float).ravel()
    K = rbf_kernel(X, X, hyper.lengthscale)
    L = linalg.cholesky(K + hyper.noise_variance * np.eye(y.size), lower=True)
    a = linalg.cho_solve((L, True), y)
    return float(
        -0.5 * y @ a - np.sum(np.log(np.diag(L))) - 0.5 * y.size * math.log(2.0 * math.pi)
    )


def gp_fit_hyper(X0, y0, grid: Optional[Iterable[GpHyper]] = None) -> GpHyper:
    """Grid candidate with the largest log marginal likelihood (first wins ties)."""
    X0 = _as_inputs(X0)
    y0 = np.asarray(y0, dtype=float).ravel()
    if y0.size < 2:
        raise ValueError("need at least two points to fit GP hyperparameters")
    grid = list(default_grid(X0.shape[1]) if grid is None else grid)
    if not grid:
        raise ValueError("hyperparameter grid is empty")
    best, best_val = None, -math.inf
    for hyper in grid:
        try:
            val = gp_log_marginal(X0, y0, hyper)
        except linalg.LinAlgError:
            continue
        if val > best_val:
            best, best_val = hyper, val
    if best is None:
        raise linalg.LinAlgError("every grid candidate failed to factorise")
    return best


def gp_acquisition(state: GpState, candidates) -> int:
    """Index of the candidate with the largest predictive variance (first on ties)."""
    candidates = _as_inputs(candidates, state.dims)
    if candidates.shape[0] == 0:
        raise ValueError("candidate set is empty")
    _, var = state.predict(candidates)
    return int(np.argmax(var))


__all__ = [
    "GpHyper",
    "GpState",
    "default_grid",
    "rbf_kernel",
    "gp_posterior",
    "gp_incremental_kl_backward",
    "gp_incremental_kl_forward",
    "incremental_kl_backward",
    "incremental_kl_forward",
    "gp_extend",
    "gp_log_marginal",
    "gp_fit_hyper",
    "gp_acquisition",
]
