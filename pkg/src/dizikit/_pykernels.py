"""Pure Python/NumPy versions of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np


def _log_sigmoid(x):
    if x >= 0:
        return -math.log1p(math.exp(-x))
    return x - math.log1p(math.exp(x))


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def viterbi(emit, trans):
    n, T = emit.shape
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    delta = emit[0].copy()
    back = np.zeros((n, T), dtype=np.int64)
    for t in range(1, n):
        cand = delta[:, None] + trans
        back[t] = np.argmax(cand, axis=0)  # first maximum: lowest index wins ties
        delta = cand[back[t], np.arange(T)] + emit[t]
    path = np.zeros(n, dtype=np.int64)
    path[-1] = int(np.argmax(delta))
    for t in range(n - 1, 0, -1):
        path[t - 1] = back[t, path[t]]
    return path, float(delta[path[-1]])


def _logsumexp(a, axis):
    m = np.max(a, axis=axis, keepdims=True)
    safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - safe), axis=axis, keepdims=True)) + safe
    return np.squeeze(out, axis=axis)


def forward_backward(emit, trans):
    n, T = emit.shape
    alpha = np.empty((n, T))
    beta = np.zeros((n, T))
    alpha[0] = emit[0]
    for t in range(1, n):
        alpha[t] = _logsumexp(alpha[t - 1][:, None] + trans, axis=0) + emit[t]
    for t in range(n - 2, -1, -1):
        beta[t] = _logsumexp(trans + (emit[t + 1] + beta[t + 1])[None, :], axis=1)
    log_z = float(_logsumexp(alpha[-1], axis=0))
    marg = np.exp(alpha + beta - log_z)
    edge = np.zeros((T, T))
    for t in range(1, n):
        edge += np.exp(alpha[t - 1][:, None] + trans + (emit[t] + beta[t])[None, :] - log_z)
    return log_z, marg, edge


def _train_target(W_out, h, neu1e, target, neg_row, lr):
    loss = 0.0
    for k in range(len(neg_row) + 1):
        if k == 0:
            w, label = target, 1.0
        else:
            w = neg_row[k - 1]
            if w == target:
                continue
            label = 0.0
        f = float(h @ W_out[w])
        loss -= _log_sigmoid(f) if label == 1.0 else _log_sigmoid(-f)
        g = lr * (label - _sigmoid(f))
        neu1e += g * W_out[w]
        W_out[w] += g * h
    return loss


def sgns_epoch(W_in, W_out, centers, contexts, negatives, lrs):
    d = W_in.shape[1]
    loss = 0.0
    neu1e = np.zeros(d)
    for p in range(len(centers)):
        c = centers[p]
        neu1e[:] = 0.0
        loss += _train_target(W_out, W_in[c], neu1e, contexts[p], negatives[p], lrs[p])
        W_in[c] += neu1e
    return loss


def cbow_epoch(W_in, W_out, targets, ctx_flat, ctx_offsets, negatives, lrs):
    d = W_in.shape[1]
    loss = 0.0
    neu1e = np.zeros(d)
    for p in range(len(targets)):
        ctx = ctx_flat[ctx_offsets[p]:ctx_offsets[p + 1]]
        if len(ctx) == 0:
            continue
        inv = 1.0 / len(ctx)
        h = W_in[ctx].sum(axis=0) * inv
        neu1e[:] = 0.0
        loss += _train_target(W_out, h, neu1e, targets[p], negatives[p], lrs[p])
        for q in ctx:
            W_in[q] += neu1e * inv
    return loss
