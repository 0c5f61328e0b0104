# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused objective kernels; see ``_kernels_py`` for the reference twin."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log

cnp.import_array()


cdef void _log_softmax_row(const double[:, ::1] z, Py_ssize_t i, double tau,
                           double[::1] out) noexcept nogil:
    cdef Py_ssize_t j, c = z.shape[1]
    cdef double mx = z[i, 0] / tau
    cdef double s = 0.0
    cdef double v
    for j in range(1, c):
        v = z[i, j] / tau
        if v > mx:
            mx = v
    for j in range(c):
        out[j] = z[i, j] / tau - mx
        s += exp(out[j])
    s = log(s)
    for j in range(c):
        out[j] -= s


def log_softmax_rows(z, double tau=1.0):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t i, n = zv.shape[0]
    out = np.empty((n, zv.shape[1]))
    cdef double[:, ::1] ov = out
    for i in range(n):
        _log_softmax_row(zv, i, tau, ov[i])
    return out


def distill_objective(z, labels, double hard_weight, targets, double soft_weight,
                      double tau):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef Py_ssize_t n = zv.shape[0], c = zv.shape[1]
    cdef Py_ssize_t i, j
    cdef const cnp.int64_t[::1] lv
    cdef const double[:, ::1] tv
    cdef double[::1] buf = np.empty(c)
    grad = np.zeros((n, c))
    cdef double[:, ::1] gv = grad
    cdef double loss = 0.0, t
    cdef double inv_tau = soft_weight / tau
    cdef bint use_hard = hard_weight != 0.0
    cdef bint use_soft = soft_weight != 0.0
    if use_hard:
        lv = np.ascontiguousarray(labels, dtype=np.int64)
    if use_soft:
        tv = np.ascontiguousarray(targets, dtype=np.float64)
    with nogil:
        for i in range(n):
            if use_hard:
                _log_softmax_row(zv, i, 1.0, buf)
                loss -= hard_weight * buf[lv[i]]
                for j in range(c):
                    gv[i, j] += hard_weight * exp(buf[j])
                gv[i, lv[i]] -= hard_weight
            if use_soft:
                _log_softmax_row(zv, i, tau, buf)
                for j in range(c):
                    t = tv[i, j]
                    if t > 0.0:
                        loss += soft_weight * (t * log(t) - t * buf[j])
                    else:
                        loss -= soft_weight * t * buf[j]
                    gv[i, j] += inv_tau * (exp(buf[j]) - t)
        for i in range(n):
            for j in range(c):
                gv[i, j] /= n
    return loss / n, grad


def contrast_objective(z, labels, ref_logq, double weight, double tau, bint reverse):
    cdef const double[:, ::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef const cnp.int64_t[::1] lv = np.ascontiguousarray(labels, dtype=np.int64)
    cdef Py_ssize_t n = zv.shape[0], c = zv.shape[1]
    cdef Py_ssize_t i, j
    cdef const double[:, ::1] qv
    cdef double[::1] buf = np.empty(c)
    cdef double[::1] gap = np.empty(c)
    grad = np.zeros((n, c))
    cdef double[:, ::1] gv = grad
    cdef double loss = 0.0, kl, mean_gap, p, q
    cdef bint use_kl = weight != 0.0
    if use_kl:
        qv = np.ascontiguousarray(ref_logq, dtype=np.float64)
    with nogil:
        for i in range(n):
            _log_softmax_row(zv, i, 1.0, buf)
            loss -= buf[lv[i]]
            for j in range(c):
                gv[i, j] = exp(buf[j])
            gv[i, lv[i]] -= 1.0
            if not use_kl:
                continue
            _log_softmax_row(zv, i, tau, buf)
            kl = 0.0
            if reverse:
                for j in range(c):
                    q = exp(qv[i, j])
                    kl += q * (qv[i, j] - buf[j])
                    gv[i, j] -= weight * (exp(buf[j]) - q) / tau
            else:
                mean_gap = 0.0
                for j in range(c):
                    p = exp(buf[j])
                    gap[j] = buf[j] - qv[i, j]
                    kl += p * gap[j]
                    mean_gap += p * gap[j]
                for j in range(c):
                    p = exp(buf[j])
                    gv[i, j] -= weight * p * (gap[j] - mean_gap) / tau
            loss -= weight * kl
        for i in range(n):
            for j in range(c):
                gv[i, j] /= n
    return loss / n, grad
