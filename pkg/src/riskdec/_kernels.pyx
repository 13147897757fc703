# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Semantics must match ``_kernels_py`` exactly."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()


def softmax_xent(const double[:, ::1] logits, const cnp.int64_t[::1] labels):
    """Summed cross-entropy and the residual softmax(logits) - onehot(labels)."""
    cdef Py_ssize_t n = logits.shape[0], C = logits.shape[1]
    cdef Py_ssize_t i, c
    cdef double m, s, lse, total = 0.0
    resid_arr = np.empty((n, C), dtype=np.float64)
    cdef double[:, ::1] resid = resid_arr
    with nogil:
        for i in range(n):
            m = logits[i, 0]
            for c in range(1, C):
                if logits[i, c] > m:
                    m = logits[i, c]
            s = 0.0
            for c in range(C):
                resid[i, c] = exp(logits[i, c] - m)
                s = s + resid[i, c]
            lse = m + log(s)
            total = total + (lse - logits[i, labels[i]])
            for c in range(C):
                resid[i, c] = resid[i, c] / s
            resid[i, labels[i]] = resid[i, labels[i]] - 1.0
    return total, resid_arr


def pairwise_potential(const double[:, ::1] Z):
    """(vmax, sum exp(v - vmax), npairs) over distinct pairs, v = -2 |zi - zj|^2.

    Neumaier-compensated so the sum does not depend on accumulation drift.
    """
    cdef Py_ssize_t n = Z.shape[0], d = Z.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double diff, sq, v, vmax = -INFINITY
    cdef double s = 0.0, comp = 0.0, t, term
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(d):
                    diff = Z[i, k] - Z[j, k]
                    sq = sq + diff * diff
                v = -2.0 * sq
                if v > vmax:
                    vmax = v
        for i in range(n):
            for j in range(i + 1, n):
                sq = 0.0
                for k in range(d):
                    diff = Z[i, k] - Z[j, k]
                    sq = sq + diff * diff
                term = exp(-2.0 * sq - vmax)
                t = s + term
                if abs(s) >= abs(term):
                    comp = comp + ((s - t) + term)
                else:
                    comp = comp + ((term - t) + s)
                s = t
    return vmax, s + comp, n * (n - 1) // 2


def lattice_objectives(const double[:, ::1] X, const cnp.int64_t[::1] y, double lam,
                       const double[:, :, ::1] params):
    """Regularized mean cross-entropy for each parameter block.

    ``params[p, :d, :]`` holds weights and ``params[p, d, :]`` the bias.
    """
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1]
    cdef Py_ssize_t P = params.shape[0], C = params.shape[2]
    cdef Py_ssize_t p, i, j, c
    cdef double m, s, z, zy, total, pen
    out_arr = np.empty(P, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double[::1] logit = np.empty(C, dtype=np.float64)
    with nogil:
        for p in range(P):
            pen = 0.0
            for j in range(d):
                for c in range(C):
                    pen = pen + params[p, j, c] * params[p, j, c]
            total = 0.0
            for i in range(n):
                for c in range(C):
                    z = params[p, d, c]
                    for j in range(d):
                        z = z + X[i, j] * params[p, j, c]
                    logit[c] = z
                m = logit[0]
                for c in range(1, C):
                    if logit[c] > m:
                        m = logit[c]
                s = 0.0
                for c in range(C):
                    s = s + exp(logit[c] - m)
                zy = logit[y[i]]
                total = total + (m + log(s) - zy)
            out[p] = total / n + 0.5 * lam * pen
    return out_arr
