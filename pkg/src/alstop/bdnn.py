"""KL upper bound between dropout-style Gaussian-mixture weight posteriors.

Each layer's weight row ``w_h`` (one per input unit) is distributed as
``p N(m_h, s2 I) + (1 - p) N(0, s2 I)`` and the bias as ``N(nu, s2 I)``.
The bound pairs mixture components by their dropout indicator and sums the
component KLs, which upper-bounds the mixture KL by the chain rule.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class DropoutLayerParams:
    """One layer: ``mean_matrix`` is (H_in, H_out), row h is the mean of ``w_h``."""

    mean_matrix: np.ndarray
    bias_mean: np.ndarray
    variance: float
    keep_prob: float

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.mean_matrix, dtype=float))
        nu = np.asarray(self.bias_mean, dtype=float).ravel()
        if nu.size != M.shape[1]:
            raise ValueError(
                f"bias has {nu.size} entries but the mean matrix has {M.shape[1]} outputs"
            )
        if not (math.isfinite(self.variance) and self.variance > 0):
            raise ValueError(f"variance must be positive, got {self.variance!r}")
        if not 0.0 < self.keep_prob < 1.0:
            raise ValueError(f"keep_prob must lie in (0, 1), got {self.keep_prob!r}")
        object.__setattr__(self, "mean_matrix", M)
        object.__setattr__(self, "bias_mean", nu)
        object.__setattr__(self, "variance", float(self.variance))
        object.__setattr__(self, "keep_prob", float(self.keep_prob))

    @property
    def widths(self) -> tuple:
        return self.mean_matrix.shape


@dataclass(frozen=True)
class BdnnPosterior:
    layers: tuple

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValueError("a posterior needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.widths[1] != nxt.widths[0]:
                raise ValueError(
                    f"layer widths do not chain: {prev.widths} followed by {nxt.widths}"
                )
        object.__setattr__(self, "layers", layers)


def bernoulli_kl(p: float, q: float) -> float:
    """KL[Bern(p) || Bern(q)], with 0 log 0 = 0; +inf when q excludes p's support."""
    total = 0.0
    for a, b in ((p, q), (1.0 - p, 1.0 - q)):
        if a > 0.0:
            if b <= 0.0:
                return math.inf
            total += a * math.log(a / b)
    return total


def _gauss_ratio_term(s2: float, s2q: float) -> float:
    rho = s2 / s2q
    return rho - math.log(rho) - 1.0


def _check_architecture(p: BdnnPosterior, q: BdnnPosterior):
    if len(p.layers) != len(q.layers):
        raise ValueError(f"layer counts differ: {len(p.layers)} vs {len(q.layers)}")
    for i, (a, b) in enumerate(zip(p.layers, q.layers)):
        if a.widths != b.widths:
            raise ValueError(f"layer {i} widths differ: {a.widths} vs {b.widths}")


def bdnn_kl_bound(p: BdnnPosterior, q: BdnnPosterior) -> float:
    """Upper bound on KL[p || q] for matching architectures.

    Per layer with widths (H_in, H_out), rho = s2 / s2', and
    R = rho - log rho - 1::

        p_l ||M - M'||_F^2 / (2 s2') + ||nu - nu'||^2 / (2 s2')
        + H_in * KL[Bern(p_l) || Bern(q_l)] + (1 + H_in) * H_out / 2 * R
    """
    _check_architecture(p, q)
    total = 0.0
    for a, b in zip(p.layers, q.layers):
        h_in, h_out = a.widths
        dM = a.mean_matrix - b.mean_matrix
        dnu = a.bias_mean - b.bias_mean
        total += 0.5 * (
            a.keep_prob * float(np.sum(dM * dM)) + float(dnu @ dnu)
        ) / b.variance
        total += h_in * bernoulli_kl(a.keep_prob, b.keep_prob)
        total += 0.5 * (1 + h_in) * h_out * _gauss_ratio_term(a.variance, b.variance)
    return max(total, 0.0)


def bdnn_kl_bound_simplified(p: BdnnPosterior, q: BdnnPosterior) -> float:
    """Bound for equal per-layer variances and keep probabilities.

    Reduces to ``sum_l (p_l ||M - M'||_F^2 + ||nu - nu'||^2) / (2 s2_l)``.
    """
    _check_architecture(p, q)
    total = 0.0
    for i, (a, b) in enumerate(zip(p.layers, q.layers)):
        if a.variance != b.variance or a.keep_prob != b.keep_prob:
            raise ValueError(
                f"layer {i}: simplified bound needs equal variance and keep probability"
            )
        dM = a.mean_matrix - b.mean_matrix
        dnu = a.bias_mean - b.bias_mean
        total += (a.keep_prob * float(np.sum(dM * dM)) + float(dnu @ dnu)) / (2.0 * a.variance)
    return total


PARAM_FIELDS = ("layer", "param", "i", "j", "value")


def save_bdnn_posterior(posterior: BdnnPosterior, path) -> None:
    """Write layer parameters as long-format CSV ``layer,param,i,j,value``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PARAM_FIELDS)
        for li, layer in enumerate(posterior.layers):
            for (i, j), v in np.ndenumerate(layer.mean_matrix):
                w.writerow([li, "M", i, j, repr(float(v))])
            for j, v in enumerate(layer.bias_mean):
                w.writerow([li, "nu", 0, j, repr(float(v))])
            w.writerow([li, "sigma2", 0, 0, repr(layer.variance)])
            w.writerow([li, "p", 0, 0, repr(layer.keep_prob)])


def load_bdnn_posterior(path) -> BdnnPosterior:
    """Read the format written by :func:`save_bdnn_posterior`."""
    entries: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != PARAM_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(PARAM_FIELDS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                layer, param, i, j, value = row
                entries.setdefault(int(layer), []).append(
                    (param.strip(), int(i), int(j), float(value))
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row!r}") from exc
    if not entries or sorted(entries) != list(range(len(entries))):
        raise ValueError(f"{path}: layers must be numbered 0..L-1")
    layers = []
    for li in range(len(entries)):
        rows = entries[li]
        m_cells = [(i, j, v) for p, i, j, v in rows if p == "M"]
        nu_cells = [(j, v) for p, _, j, v in rows if p == "nu"]
        scalars = {p: v for p, _, _, v in rows if p in ("sigma2", "p")}
        if not m_cells or "sigma2" not in scalars or "p" not in scalars:
            raise ValueError(f"{path}: layer {li} is missing M, sigma2 or p")
        shape = (max(i for i, _, _ in m_cells) + 1, max(j for _, j, _ in m_cells) + 1)
        M = np.zeros(shape)
        for i, j, v in m_cells:
            M[i, j] = v
        nu = np.zeros(shape[1])
        for j, v in nu_cells:
            nu[j] = v
        layers.append(DropoutLayerParams(M, nu, scalars["sigma2"], scalars["p"]))
    return BdnnPosterior(tuple(layers))


__all__: Sequence[str] = (
    "DropoutLayerParams",
    "BdnnPosterior",
    "bernoulli_kl",
    "bdnn_kl_bound",
    "bdnn_kl_bound_simplified",
    "save_bdnn_posterior",
    "load_bdnn_posterior",
)
