"""Lambert-W stability radius and the error-ratio stopping controller.

Everything here consumes KL values only; computing them is the job of the
model modules.  ``StoppingState`` is an immutable value: ``step_stopping``
returns a new state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from ._backend import kernels

INV_E = 1.0 / math.e
BRANCH_CLAMP = 1e-12
KL_ROUNDOFF = 1e-10


class StoppingError(RuntimeError):
    """Raised when stepping a controller that has already stopped."""


class ConfigurationError(ValueError):
    """Raised for controller configurations that cannot produce an error ratio."""


def _check_finite(name: str, value: float) -> float:
    value = float(value)
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")
    return value


def clamp_kl(kl: float) -> float:
    """Map tiny negative roundoff in ``[-1e-10, 0)`` to 0; reject anything worse."""
    kl = _check_finite("KL divergence", kl)
    if kl < 0.0:
        if kl < -KL_ROUNDOFF:
            raise ValueError(f"KL divergence must be nonnegative, got {kl!r}")
        return 0.0
    return kl


def lambert_w0(x: float) -> float:
    """Principal branch of the Lambert W function for real ``x >= -1/e``.

    Inputs within 1e-12 below ``-1/e`` are clamped to the branch point.
    """
    x = _check_finite("x", x)
    if x < -INV_E - BRANCH_CLAMP:
        raise ValueError(f"lambert_w0 is undefined for x < -1/e, got {x!r}")
    return kernels.lambert_w0_scalar(x)


def lambert_w0_array(x) -> np.ndarray:
    """Vectorised :func:`lambert_w0` with the same domain rules."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("lambert_w0 input must be finite")
    if np.any(x < -INV_E - BRANCH_CLAMP):
        raise ValueError("lambert_w0 is undefined for x < -1/e")
    return kernels.lambert_w0_array(x)


def stability_radius(kl: float) -> float:
    """Return ``exp(W0((kl - 1)/e) + 1) - 1``.

    This is the multiplier bounding the gap in expected loss between two
    distributions whose KL divergence is ``kl`` (loss range normalised to 1).
    It is 0 at ``kl = 0`` and strictly increasing.
    """
    return kernels.radius_scalar(clamp_kl(kl))


def stability_radius_array(kl) -> np.ndarray:
    kl = np.asarray(kl, dtype=np.float64)
    if not np.all(np.isfinite(kl)):
        raise ValueError("KL divergence must be finite")
    if np.any(kl < -KL_ROUNDOFF):
        raise ValueError("KL divergence must be nonnegative")
    return kernels.radius_array(np.maximum(kl, 0.0))


def stability_radius_general(kl: float, v: float, range_: float) -> float:
    """Radius using a second-moment bound ``v >= E[(L - a)^2]`` and range ``b - a``.

    Returns ``(v / range_) * (exp(W0(u) + 1) - 1)`` with
    ``u = (range_**2 * kl - v) / (v e)``.  Since ``u = (kl' - 1)/e`` for
    ``kl' = range_**2 * kl / v``, this is evaluated through the same kernel as
    :func:`stability_radius`.
    """
    kl = clamp_kl(kl)
    v = _check_finite("v", v)
    range_ = _check_finite("range", range_)
    if v <= 0.0:
        raise ValueError(f"v must be positive, got {v!r}")
    if range_ <= 0.0:
        raise ValueError(f"range must be positive, got {range_!r}")
    if v == range_ * range_:
        return range_ * kernels.radius_scalar(kl)
    return (v / range_) * kernels.radius_scalar(range_ * range_ * kl / v)


@dataclass(frozen=True)
class KlPair:
    """KL divergences between consecutive posteriors, in nats.

    ``forward`` is KL[p_t || p_{t-1}] and ``backward`` is KL[p_{t-1} || p_t].
    """

    forward: float
    backward: float

    def __post_init__(self):
        object.__setattr__(self, "forward", clamp_kl(self.forward))
        object.__setattr__(self, "backward", clamp_kl(self.backward))


def error_bound_width(pair: KlPair) -> float:
    """Sum of the two directed radii; bounds |change in expected loss| / (b - a)."""
    return kernels.radius_scalar(pair.forward) + kernels.radius_scalar(pair.backward)


class Decision(Enum):
    CONTINUE = "continue"
    STOP = "stop"


@dataclass(frozen=True)
class StoppingState:
    """State of the error-ratio stopping controller.

    ``m`` radii are collected before the normaliser ``gamma_tilde`` (their
    minimum) is fixed; stopping is allowed from step ``max(m, min_steps)``
    on, as soon as ``lambda_t <= threshold``.
    """

    threshold: float
    m: int = 10
    min_steps: int = 10
    t: int = 0
    radius_history: tuple = ()
    gamma_tilde: Optional[float] = None
    lambda_history: tuple = ()
    stopped: bool = False

    def __post_init__(self):
        thr = _check_finite("threshold", self.threshold)
        if not 0.0 <= thr <= 1.0:
            raise ValueError(f"threshold must lie in [0, 1], got {thr!r}")
        if int(self.m) < 1:
            raise ValueError(f"m must be a positive integer, got {self.m!r}")
        if int(self.min_steps) < 1:
            raise ValueError(f"min_steps must be a positive integer, got {self.min_steps!r}")

    @property
    def last_lambda(self) -> Optional[float]:
        if self.gamma_tilde is None or not self.lambda_history:
            return None
        return self.lambda_history[-1]


def step_stopping(state: StoppingState, pair: KlPair):
    """Advance the controller by one acquisition.

    Returns ``(new_state, decision, lambda_t)``; ``lambda_t`` is ``None``
    until ``m`` radii have been seen.  When the normaliser is fixed at step
    ``m`` the error ratios of steps ``1..m`` are filled in as well, so
    ``lambda_history`` always covers every step once it exists.
    """
    if state.stopped:
        raise StoppingError("controller has already stopped")
    r = error_bound_width(pair)
    t = state.t + 1
    radii = state.radius_history + (r,)
    gamma = state.gamma_tilde
    lambdas = state.lambda_history
    if gamma is None and t == state.m:
        gamma = min(radii[: state.m])
        if gamma <= 0.0:
            raise ConfigurationError(
                f"all of the first m={state.m} stability radii are zero; "
                "the posterior never moved, so the error ratio is undefined"
            )
        lambdas = tuple(ri / gamma for ri in radii)
    elif gamma is not None:
        lambdas = lambdas + (r / gamma,)

    lam = lambdas[-1] if gamma is not None else None
    stop = (
        lam is not None
        and t >= max(state.m, state.min_steps)
        and lam <= state.threshold
    )
    new_state = replace(
        state,
        t=t,
        radius_history=radii,
        gamma_tilde=gamma,
        lambda_history=lambdas,
        stopped=stop,
    )
    return new_state, (Decision.STOP if stop else Decision.CONTINUE), lam


def error_ratios(radii: Sequence[float], m: int) -> list:
    """Error ratios for a whole radius sequence; ``None`` everywhere if it is shorter than ``m``."""
    radii = list(radii)
    if len(radii) < m:
        return [None] * len(radii)
    gamma = min(radii[:m])
    if gamma <= 0.0:
        raise ConfigurationError(f"all of the first m={m} stability radii are zero")
    return [r / gamma for r in radii]


def first_stop_step(lambdas: Sequence[Optional[float]], threshold: float, m: int, min_steps: int):
    """Replay a stopping rule over recorded error ratios (1-based step, or ``None``)."""
    start = max(m, min_steps)
    for i, lam in enumerate(lambdas, start=1):
        if i >= start and lam is not None and lam <= threshold:
            return i
    return None


@dataclass(frozen=True)
class MartingaleParams:
    eta: float
    delta: float

    def __post_init__(self):
        for name in ("eta", "delta"):
            value = _check_finite(name, getattr(self, name))
            if not 0.0 < value < 1.0:
                raise ValueError(f"{name} must lie in the open interval (0, 1), got {value!r}")


def martingale_threshold(params: MartingaleParams) -> float:
    """Threshold ``sqrt(-2 / log(delta/2)) * eta``.

    Stopping once the error ratio is below this value keeps the deviation of
    the expected loss from its conditional expectation within ``eta`` (in
    units of the normaliser) with probability at least ``1 - delta``.
    """
    return math.sqrt(-2.0 / math.log(params.delta / 2.0)) * params.eta
