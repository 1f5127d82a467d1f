"""Bayesian ridge regression and Laplace-approximated logistic regression.

Both models use an additive RBF basis and produce :class:`GaussianPosterior`
objects whose closed-form KL divergences drive the stopping criterion.
Matrices follow the column convention: a design matrix is J x n, one column
per input.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit, log_expit

from .stability import KL_ROUNDOFF

HYPER_MIN = 1e-8
HYPER_MAX = 1e8


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped at its iteration cap."""


class NotConvergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class RbfBasis:
    """Additive Gaussian RBF basis: ``M`` centers per input dimension.

    ``centers`` has shape (D, M); ``bandwidth`` has shape (D,) and equals the
    spacing of adjacent centers in each dimension.  Feature ``d * M + m`` is
    ``exp(-(x_d - centers[d, m])**2 / (2 bandwidth[d]**2))``.
    """

    centers: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        bandwidth = np.broadcast_to(
            np.asarray(self.bandwidth, dtype=float), (centers.shape[0],)
        ).copy()
        if centers.shape[1] < 1:
            raise ValueError("need at least one center per dimension")
        if np.any(np.diff(centers, axis=1) <= 0):
            raise ValueError("centers must be strictly increasing within each dimension")
        if np.any(bandwidth <= 0) or not np.all(np.isfinite(bandwidth)):
            raise ValueError("bandwidth must be positive and finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "bandwidth", bandwidth)

    @classmethod
    def from_data(cls, X, centers_per_dim: int = 10) -> "RbfBasis":
        """Equally spaced centers over each feature's observed range."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if centers_per_dim < 2:
            raise ValueError("centers_per_dim must be at least 2")
        lo = X.min(axis=0)
        hi = X.max(axis=0)
        flat = hi - lo <= 0
        lo = np.where(flat, lo - 0.5, lo)
        hi = np.where(flat, hi + 0.5, hi)
        centers = np.linspace(lo, hi, centers_per_dim, axis=1)
        return cls(centers, (hi - lo) / (centers_per_dim - 1))

    @property
    def dims(self) -> int:
        return self.centers.shape[0]

    @property
    def centers_per_dim(self) -> int:
        return self.centers.shape[1]

    @property
    def size(self) -> int:
        return self.dims * self.centers_per_dim


def design_matrix(basis: RbfBasis, inputs) -> np.ndarray:
    """Feature matrix with one column per input, shape (J, n)."""
    X = np.asarray(inputs, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1) if basis.dims == X.shape[0] else X.reshape(-1, 1)
    if X.shape[0] == 0:
        raise ValueError("inputs must be nonempty")
    if X.shape[1] != basis.dims:
        raise ValueError(f"inputs have dimension {X.shape[1]}, basis expects {basis.dims}")
    # (n, D, M) scaled offsets
    z = (X[:, :, None] - basis.centers[None, :, :]) / basis.bandwidth[None, :, None]
    phi = np.exp(-0.5 * z * z)
    return phi.reshape(X.shape[0], -1).T


@dataclass(frozen=True)
class GaussianPosterior:
    """Gaussian over weights, stored by mean and precision.

    ``chol`` is the lower Cholesky factor of the precision; the covariance is
    never formed explicitly unless asked for.
    """

    mean: np.ndarray
    precision: np.ndarray
    chol: np.ndarray

    @classmethod
    def from_precision(cls, mean, precision, check: bool = True) -> "GaussianPosterior":
        mean = np.asarray(mean, dtype=float).ravel()
        precision = np.asarray(precision, dtype=float)
        precision = 0.5 * (precision + precision.T)
        if precision.shape != (mean.size, mean.size):
            raise ValueError("precision shape does not match mean")
        try:
            chol = linalg.cholesky(precision, lower=True)
        except linalg.LinAlgError as exc:
            raise linalg.LinAlgError("precision matrix is not positive definite") from exc
        post = cls(mean, precision, chol)
        if check:
            resid = np.max(np.abs(post.covariance @ precision - np.eye(mean.size)))
            if resid > 1e-8:
                raise linalg.LinAlgError(
                    f"precision is too ill-conditioned to invert (residual {resid:.3g})"
                )
        return post

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def covariance(self) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), np.eye(self.dim))

    def logdet_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def quad_variance(self, Phi: np.ndarray) -> np.ndarray:
        """``phi^T Sigma phi`` for every column of ``Phi``."""
        V = linalg.solve_triangular(self.chol, Phi, lower=True)
        return np.einsum("ij,ij->j", V, V)


def gaussian_kl(p: GaussianPosterior, q: GaussianPosterior) -> float:
    """KL[p || q] between two Gaussians given by precision factors."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    # tr(Lambda_q Sigma_p) = ||L_p^{-1} L_q||_F^2
    A = linalg.solve_triangular(p.chol, q.chol, lower=True)
    trace = float(np.sum(A * A))
    logdet = q.logdet_precision() - p.logdet_precision()
    d = q.chol.T @ (q.mean - p.mean)
    kl = 0.5 * (trace - logdet + float(d @ d) - p.dim)
    if -KL_ROUNDOFF <= kl < 0.0:
        return 0.0
    return kl


@dataclass(frozen=True)
class BrrHyper:
    alpha: float
    beta: float

    def __post_init__(self):
        for name in ("alpha", "beta"):
            value = float(getattr(self, name))
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value!r}")


def _as_xy(S):
    X, y = S
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != y.size:
        raise ValueError("inputs and targets differ in length")
    return X, y


def brr_posterior(basis: RbfBasis, hyper: BrrHyper, S) -> GaussianPosterior:
    """Posterior N(mu, Sigma) with Sigma^{-1} = beta Psi Psi^T + alpha I, mu = beta Sigma Psi y.

    ``S`` is an ``(X, y)`` pair; it may be empty.
    """
    X, y = _as_xy(S)
    J = basis.size
    precision = hyper.alpha * np.eye(J)
    if y.size == 0:
        return GaussianPosterior.from_precision(np.zeros(J), precision)
    Phi = design_matrix(basis, X)
    precision = precision + hyper.beta * (Phi @ Phi.T)
    return _posterior_from_normal_eq(precision, hyper.beta * (Phi @ y))


def _posterior_from_normal_eq(precision, rhs) -> GaussianPosterior:
    precision = 0.5 * (precision + precision.T)
    chol = linalg.cholesky(precision, lower=True)
    mean = linalg.cho_solve((chol, True), rhs)
    return GaussianPosterior.from_precision(mean, precision)


def brr_update_hyper(
    basis: RbfBasis, hyper: BrrHyper, S, max_iter: int = 100, rtol: float = 1e-6
) -> BrrHyper:
    """Evidence fixed point for (alpha, beta).

    Iterates alpha = tau / mu^T mu and 1/beta = ||y - Psi^T mu||^2 / (n - tau),
    where tau = sum_i tau_i / (tau_i + alpha) over the eigenvalues tau_i of
    beta Psi Psi^T.  Values are clamped to [1e-8, 1e8].  Hitting ``max_iter``
    emits a :class:`ConvergenceWarning` and returns the last iterate.
    """
    X, y = _as_xy(S)
    n = y.size
    if n < 2:
        raise ValueError("need at least two labeled points to fit hyperparameters")
    Phi = design_matrix(basis, X)
    gram = Phi @ Phi.T
    eig0 = np.clip(linalg.eigvalsh(gram), 0.0, None)
    rhs0 = Phi @ y
    alpha, beta = float(hyper.alpha), float(hyper.beta)
    J = basis.size
    for _ in range(max_iter):
        precision = beta * gram + alpha * np.eye(J)
        mean = linalg.solve(precision, beta * rhs0, assume_a="pos")
        eig = beta * eig0
        tau = float(np.sum(eig / (eig + alpha)))
        mm = float(mean @ mean)
        resid = y - Phi.T @ mean
        rss = float(resid @ resid)
        new_alpha = tau / mm if mm > 0 else HYPER_MAX
        if n - tau <= 0 or rss <= 0:
            new_beta = HYPER_MAX
        else:
            new_beta = (n - tau) / rss
        new_alpha = min(max(new_alpha, HYPER_MIN), HYPER_MAX)
        new_beta = min(max(new_beta, HYPER_MIN), HYPER_MAX)
        done = abs(new_alpha - alpha) <= rtol * alpha and abs(new_beta - beta) <= rtol * beta
        alpha, beta = new_alpha, new_beta
        if done:
            return BrrHyper(alpha, beta)
    warnings.warn(
        f"evidence iteration did not converge in {max_iter} iterations",
        ConvergenceWarning,
        stacklevel=2,
    )
    return BrrHyper(alpha, beta)


def _argmax_first(scores: np.ndarray) -> int:
    if scores.size == 0:
        raise ValueError("candidate set is empty")
    return int(np.argmax(scores))


def predictive_variance(posterior: GaussianPosterior, basis: RbfBasis, inputs) -> np.ndarray:
    return posterior.quad_variance(design_matrix(basis, inputs))


def brr_acquisition(posterior: GaussianPosterior, basis: RbfBasis, candidates) -> int:
    """Index of the candidate with the largest predictive variance (first on ties)."""
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("candidate set is empty")
    return _argmax_first(predictive_variance(posterior, basis, candidates))


def _neg_log_posterior(w, Phi, y, alpha):
    a = Phi.T @ w
    # -[y log s(a) + (1-y) log s(-a)]
    nll = -float(np.sum(y * log_expit(a) + (1.0 - y) * log_expit(-a)))
    return nll + 0.5 * alpha * float(w @ w)


def _check_labels(y):
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("classification labels must be 0 or 1")


def blr_map(basis: RbfBasis, alpha: float, S, w0=None, max_iter: int = 200) -> np.ndarray:
    """MAP weights of the logistic model with a N(0, alpha^{-1} I) prior (damped Newton)."""
    X, y = _as_xy(S)
    _check_labels(y)
    J = basis.size
    w = np.zeros(J) if w0 is None else np.array(w0, dtype=float)
    if y.size == 0:
        return np.zeros(J)
    Phi = design_matrix(basis, X)
    eye = np.eye(J)
    obj = _neg_log_posterior(w, Phi, y, alpha)
    for _ in range(max_iter):
        s = expit(Phi.T @ w)
        grad = Phi @ (s - y) + alpha * w
        if np.linalg.norm(grad) <= 1e-8 * max(1.0, np.linalg.norm(w)):
            return w
        H = (Phi * (s * (1.0 - s))) @ Phi.T + alpha * eye
        step = linalg.solve(H, grad, assume_a="pos")
        t = 1.0
        # below objective resolution the line search only sees roundoff
        if float(grad @ step) <= 1e-12 * (1.0 + abs(obj)):
            w = w - step
            obj = _neg_log_posterior(w, Phi, y, alpha)
            continue
        while True:
            w_new = w - t * step
            obj_new = _neg_log_posterior(w_new, Phi, y, alpha)
            if obj_new <= obj or t < 1e-10:
                break
            t *= 0.5
        w, obj = w_new, obj_new
    s = expit(Phi.T @ w)
    grad = Phi @ (s - y) + alpha * w
    if np.linalg.norm(grad) <= 1e-8 * max(1.0, np.linalg.norm(w)):
        return w
    raise NotConvergedError(f"Newton iteration did not converge in {max_iter} iterations")


def blr_hessian(basis: RbfBasis, alpha: float, S, w) -> np.ndarray:
    """Negative log-posterior Hessian ``alpha I + sum_i s_i (1 - s_i) psi_i psi_i^T``."""
    X, y = _as_xy(S)
    J = basis.size
    H = alpha * np.eye(J)
    if y.size:
        Phi = design_matrix(basis, X)
        s = expit(Phi.T @ w)
        H = H + (Phi * (s * (1.0 - s))) @ Phi.T
    return H


def blr_laplace_posterior(basis: RbfBasis, alpha: float, S, w0=None) -> GaussianPosterior:
    """Laplace approximation: mean w_MAP, precision the log-posterior Hessian."""
    w = blr_map(basis, alpha, S, w0=w0)
    return GaussianPosterior.from_precision(w, blr_hessian(basis, alpha, S, w))


def predict_proba(posterior: GaussianPosterior, basis: RbfBasis, inputs) -> np.ndarray:
    """Plug-in probability sigma(w_MAP^T psi(x))."""
    return expit(design_matrix(basis, inputs).T @ posterior.mean)


def binary_entropy(p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -(np.where(p > 0, p * np.log(p), 0.0) + np.where(p < 1, (1 - p) * np.log1p(-p), 0.0))
    return h


def entropy_acquisition(posterior: GaussianPosterior, basis: RbfBasis, candidates) -> int:
    """Index of the candidate whose predicted label is most uncertain (first on ties)."""
    candidates = np.asarray(candidates, dtype=float)
    if candidates.size == 0:
        raise ValueError("candidate set is empty")
    return _argmax_first(binary_entropy(predict_proba(posterior, basis, candidates)))
