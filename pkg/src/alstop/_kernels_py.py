"""Pure-Python scalar kernels, used when the compiled extension is unavailable.

Inputs are assumed validated by the caller (``alstop.stability``).
Keep this file in lockstep with ``_kernels.pyx``.
"""
import math

import numpy as np

E = math.e
INV_E = 1.0 / math.e
_MAX_ITER = 64


def _w0_initial(x):
    if x < -0.32:
        # branch-point series in p = sqrt(2(ex + 1))
        p = math.sqrt(max(2.0 * (E * x + 1.0), 0.0))
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    if x < 3.0:
        l = math.log1p(x)
        return l * (1.0 - math.log1p(l) / (2.0 + l))
    l1 = math.log(x)
    l2 = math.log(l1)
    return l1 - l2 + l2 / l1


def lambert_w0_scalar(x):
    if x == 0.0:
        return 0.0
    if x <= -INV_E:
        return -1.0
    w = _w0_initial(x)
    for _ in range(_MAX_ITER):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 <= 0.0:
            w = -1.0 + 1e-8
            continue
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if abs(dw) <= 2e-16 * (1.0 + abs(w)):
            break
    return max(w, -1.0)


def _h_small(s):
    # e^s (s - 1) + 1 = sum_{k>=2} (k-1) s^k / k!
    term = s * s / 2.0
    total = term
    k = 2
    while True:
        # ratio of consecutive terms: s * k / ((k+1)(k-1))
        term *= s * k / ((k + 1.0) * (k - 1.0))
        k += 1
        total += term
        if abs(term) <= 1e-17 * total:
            return total


def _h(s):
    if s < 0.1:
        return _h_small(s)
    return math.exp(s) * (s - 1.0) + 1.0


def radius_scalar(kl):
    """exp(W0((kl-1)/e) + 1) - 1 for kl >= 0, solved in s = W0(.) + 1."""
    if kl <= 0.0:
        return 0.0
    if kl > 2.0:
        # log form: s + log(s - 1) = log(kl - 1), s > 1
        target = math.log(kl - 1.0)
        s = _w0_initial((kl - 1.0) * INV_E) + 1.0
        if s <= 1.0:
            s = 1.0 + 1e-3
        for _ in range(_MAX_ITER):
            g = s + math.log(s - 1.0) - target
            ds = g / (1.0 + 1.0 / (s - 1.0))
            s_new = s - ds
            if s_new <= 1.0:
                s_new = 0.5 * (s + 1.0)
            converged = abs(s_new - s) <= 2e-16 * s_new
            s = s_new
            if converged:
                break
        return math.expm1(s)
    p = math.sqrt(2.0 * kl)
    s = p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    for _ in range(_MAX_ITER):
        es = math.exp(s)
        f = _h(s) - kl
        d1 = s * es
        d2 = (s + 1.0) * es
        ds = f / (d1 - f * d2 / (2.0 * d1))
        s_new = s - ds
        if s_new <= 0.0:
            s_new = 0.5 * s
        converged = abs(s_new - s) <= 2e-16 * s_new
        s = s_new
        if converged:
            break
    return math.expm1(s)


def lambert_w0_array(x):
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat_in = x.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = lambert_w0_scalar(float(flat_in[i]))
    return out


def radius_array(kl):
    kl = np.ascontiguousarray(kl, dtype=np.float64)
    out = np.empty_like(kl)
    flat_in = kl.ravel()
    flat_out = out.ravel()
    for i in range(flat_in.size):
        flat_out[i] = radius_scalar(float(flat_in[i]))
    return out
