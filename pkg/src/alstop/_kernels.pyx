# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled scalar kernels: Lambert W0 and the stability radius.

Mirror of ``_kernels_py.py``; inputs are assumed validated by the caller.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, expm1, log, log1p, sqrt, fabs

cnp.import_array()

cdef double E = 2.718281828459045
cdef double INV_E = 1.0 / 2.718281828459045
cdef int MAX_ITER = 64


cdef inline double _w0_initial(double x) nogil:
    cdef double p, l, l1, l2, t
    if x < -0.32:
        t = 2.0 * (E * x + 1.0)
        p = sqrt(t) if t > 0.0 else 0.0
        return -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    if x < 3.0:
        l = log1p(x)
        return l * (1.0 - log1p(l) / (2.0 + l))
    l1 = log(x)
    l2 = log(l1)
    return l1 - l2 + l2 / l1


cdef double _lambert_w0(double x) nogil:
    cdef double w, ew, f, wp1, dw
    cdef int i
    if x == 0.0:
        return 0.0
    if x <= -INV_E:
        return -1.0
    w = _w0_initial(x)
    for i in range(MAX_ITER):
        ew = exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 <= 0.0:
            w = -1.0 + 1e-8
            continue
        dw = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1))
        w -= dw
        if fabs(dw) <= 2e-16 * (1.0 + fabs(w)):
            break
    return w if w > -1.0 else -1.0


cdef inline double _h_small(double s) nogil:
    cdef double term = s * s / 2.0
    cdef double total = term
    cdef double k = 2.0
    while True:
        term *= s * k / ((k + 1.0) * (k - 1.0))
        k += 1.0
        total += term
        if fabs(term) <= 1e-17 * total:
            return total


cdef inline double _h(double s) nogil:
    if s < 0.1:
        return _h_small(s)
    return exp(s) * (s - 1.0) + 1.0


cdef double _radius(double kl) nogil:
    cdef double target, s, s_new, g, ds, p, es, f, d1, d2
    cdef int i
    cdef bint converged
    if kl <= 0.0:
        return 0.0
    if kl > 2.0:
        target = log(kl - 1.0)
        s = _w0_initial((kl - 1.0) * INV_E) + 1.0
        if s <= 1.0:
            s = 1.0 + 1e-3
        for i in range(MAX_ITER):
            g = s + log(s - 1.0) - target
            ds = g / (1.0 + 1.0 / (s - 1.0))
            s_new = s - ds
            if s_new <= 1.0:
                s_new = 0.5 * (s + 1.0)
            converged = fabs(s_new - s) <= 2e-16 * s_new
            s = s_new
            if converged:
                break
        return expm1(s)
    p = sqrt(2.0 * kl)
    s = p - p * p / 3.0 + 11.0 / 72.0 * p * p * p
    for i in range(MAX_ITER):
        es = exp(s)
        f = _h(s) - kl
        d1 = s * es
        d2 = (s + 1.0) * es
        ds = f / (d1 - f * d2 / (2.0 * d1))
        s_new = s - ds
        if s_new <= 0.0:
            s_new = 0.5 * s
        converged = fabs(s_new - s) <= 2e-16 * s_new
        s = s_new
        if converged:
            break
    return expm1(s)


def lambert_w0_scalar(double x):
    return _lambert_w0(x)


def radius_scalar(double kl):
    """exp(W0((kl-1)/e) + 1) - 1 for kl >= 0, solved in s = W0(.) + 1."""
    return _radius(kl)


def lambert_w0_array(x):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_in
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_out
    cdef Py_ssize_t i, n
    arr = np.ascontiguousarray(x, dtype=np.float64)
    flat_in = arr.ravel()
    n = flat_in.shape[0]
    flat_out = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            flat_out[i] = _lambert_w0(flat_in[i])
    return flat_out.reshape(arr.shape)


def radius_array(kl):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_in
    cdef cnp.ndarray[cnp.float64_t, ndim=1] flat_out
    cdef Py_ssize_t i, n
    arr = np.ascontiguousarray(kl, dtype=np.float64)
    flat_in = arr.ravel()
    n = flat_in.shape[0]
    flat_out = np.empty(n, dtype=np.float64)
    with nogil:
        for i in range(n):
            flat_out[i] = _radius(flat_in[i])
    return flat_out.reshape(arr.shape)
