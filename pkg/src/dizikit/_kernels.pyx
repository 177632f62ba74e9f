# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: chain Viterbi, forward-backward and negative-sampling SGD.

Must stay behaviourally identical to ``_pykernels``.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, log1p, INFINITY

cnp.import_array()


cdef inline double _log_sigmoid(double x) nogil:
    if x >= 0:
        return -log1p(exp(-x))
    return x - log1p(exp(x))


cdef inline double _sigmoid(double x) nogil:
    cdef double z
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    z = exp(x)
    return z / (1.0 + z)


def viterbi(double[:, ::1] emit, double[:, ::1] trans):
    cdef Py_ssize_t n = emit.shape[0], T = emit.shape[1]
    cdef Py_ssize_t t, i, j, arg
    cdef double best, v
    delta_arr = np.empty((n, T), dtype=np.float64)
    back_arr = np.zeros((n, T), dtype=np.int64)
    path_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] delta = delta_arr
    cdef long long[:, ::1] back = back_arr
    cdef long long[::1] path = path_arr
    if n == 0:
        return path_arr, 0.0
    for j in range(T):
        delta[0, j] = emit[0, j]
    for t in range(1, n):
        for j in range(T):
            best = delta[t - 1, 0] + trans[0, j]
            arg = 0
            for i in range(1, T):
                v = delta[t - 1, i] + trans[i, j]
                if v > best:
                    best = v
                    arg = i
            delta[t, j] = best + emit[t, j]
            back[t, j] = arg
    best = delta[n - 1, 0]
    arg = 0
    for j in range(1, T):
        if delta[n - 1, j] > best:
            best = delta[n - 1, j]
            arg = j
    path[n - 1] = arg
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path_arr, best


cdef inline double _lse2(double a, double b) nogil:
    if a == -INFINITY:
        return b
    if b == -INFINITY:
        return a
    if a > b:
        return a + log1p(exp(b - a))
    return b + log1p(exp(a - b))


def forward_backward(double[:, ::1] emit, double[:, ::1] trans):
    cdef Py_ssize_t n = emit.shape[0], T = emit.shape[1]
    cdef Py_ssize_t t, i, j
    cdef double acc, log_z
    alpha_arr = np.empty((n, T), dtype=np.float64)
    beta_arr = np.empty((n, T), dtype=np.float64)
    marg_arr = np.empty((n, T), dtype=np.float64)
    edge_arr = np.zeros((T, T), dtype=np.float64)
    cdef double[:, ::1] alpha = alpha_arr
    cdef double[:, ::1] beta = beta_arr
    cdef double[:, ::1] marg = marg_arr
    cdef double[:, ::1] edge = edge_arr
    for j in range(T):
        alpha[0, j] = emit[0, j]
        beta[n - 1, j] = 0.0
    for t in range(1, n):
        for j in range(T):
            acc = -INFINITY
            for i in range(T):
                acc = _lse2(acc, alpha[t - 1, i] + trans[i, j])
            alpha[t, j] = acc + emit[t, j]
    for t in range(n - 2, -1, -1):
        for i in range(T):
            acc = -INFINITY
            for j in range(T):
                acc = _lse2(acc, trans[i, j] + emit[t + 1, j] + beta[t + 1, j])
            beta[t, i] = acc
    log_z = -INFINITY
    for j in range(T):
        log_z = _lse2(log_z, alpha[n - 1, j])
    for t in range(n):
        for j in range(T):
            marg[t, j] = exp(alpha[t, j] + beta[t, j] - log_z)
    for t in range(1, n):
        for i in range(T):
            for j in range(T):
                edge[i, j] += exp(alpha[t - 1, i] + trans[i, j] + emit[t, j] + beta[t, j] - log_z)
    return log_z, marg_arr, edge_arr


cdef double _train_target(double[:, ::1] W_out, double* h, double* neu1e, Py_ssize_t d,
                          Py_ssize_t target, long long[:, ::1] negatives, Py_ssize_t row,
                          double lr) nogil:
    cdef Py_ssize_t k, s, K = negatives.shape[1], w
    cdef double f, g, label, loss = 0.0
    for k in range(K + 1):
        if k == 0:
            w = target
            label = 1.0
        else:
            w = negatives[row, k - 1]
            if w == target:
                continue
            label = 0.0
        f = 0.0
        for s in range(d):
            f += h[s] * W_out[w, s]
        if label == 1.0:
            loss -= _log_sigmoid(f)
        else:
            loss -= _log_sigmoid(-f)
        g = lr * (label - _sigmoid(f))
        for s in range(d):
            neu1e[s] += g * W_out[w, s]
        for s in range(d):
            W_out[w, s] += g * h[s]
    return loss


def sgns_epoch(double[:, ::1] W_in, double[:, ::1] W_out, long long[::1] centers,
               long long[::1] contexts, long long[:, ::1] negatives, double[::1] lrs):
    """Skip-gram pass: each (center, context) pair predicts the context from the center."""
    cdef Py_ssize_t n = centers.shape[0], d = W_in.shape[1], p, s, c
    cdef double loss = 0.0
    neu1e_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] neu1e = neu1e_arr
    with nogil:
        for p in range(n):
            c = centers[p]
            for s in range(d):
                neu1e[s] = 0.0
            loss += _train_target(W_out, &W_in[c, 0], &neu1e[0], d, contexts[p], negatives, p, lrs[p])
            for s in range(d):
                W_in[c, s] += neu1e[s]
    return loss


def cbow_epoch(double[:, ::1] W_in, double[:, ::1] W_out, long long[::1] targets,
               long long[::1] ctx_flat, long long[::1] ctx_offsets,
               long long[:, ::1] negatives, double[::1] lrs):
    """CBOW pass: the mean of the context vectors predicts each target."""
    cdef Py_ssize_t n = targets.shape[0], d = W_in.shape[1], p, s, q, lo, hi
    cdef double loss = 0.0, inv
    h_arr = np.zeros(d, dtype=np.float64)
    neu1e_arr = np.zeros(d, dtype=np.float64)
    cdef double[::1] h = h_arr
    cdef double[::1] neu1e = neu1e_arr
    with nogil:
        for p in range(n):
            lo = ctx_offsets[p]
            hi = ctx_offsets[p + 1]
            if hi == lo:
                continue
            inv = 1.0 / (hi - lo)
            for s in range(d):
                h[s] = 0.0
                neu1e[s] = 0.0
            for q in range(lo, hi):
                for s in range(d):
                    h[s] += W_in[ctx_flat[q], s]
            for s in range(d):
                h[s] *= inv
            loss += _train_target(W_out, &h[0], &neu1e[0], d, targets[p], negatives, p, lrs[p])
            for q in range(lo, hi):
                for s in range(d):
                    W_in[ctx_flat[q], s] += neu1e[s] * inv
    return loss
