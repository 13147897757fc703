"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``."""

import math

import numpy as np


def softmax_xent(logits, labels):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(s[:, 0])
    rows = np.arange(len(labels))
    total = float(np.sum(lse - logits[rows, labels]))
    resid = e / s
    resid[rows, labels] -= 1.0
    return total, resid


def pairwise_potential(Z, block=None):
    n = Z.shape[0]
    if block is None:
        block = max(1, min(512, (1 << 22) // max(1, n * Z.shape[1])))
    values = []
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = Z[start:stop, None, :] - Z[None, :, :]
        sq = np.einsum("ijk,ijk->ij", diff, diff)
        ii, jj = np.triu_indices(stop - start, k=1, m=n - start)
        values.append(-2.0 * sq[ii, jj + start])
    v = np.concatenate(values) if values else np.empty(0)
    vmax = float(v.max()) if v.size else -math.inf
    return vmax, math.fsum(np.exp(v - vmax).tolist()), n * (n - 1) // 2


def lattice_objectives(X, y, lam, params, chunk=4096):
    n, d = X.shape
    out = np.empty(params.shape[0])
    rows = np.arange(n)
    for start in range(0, params.shape[0], chunk):
        P = params[start:start + chunk]
        W, b = P[:, :d, :], P[:, d, :]
        logits = np.einsum("nj,pjc->pnc", X, W) + b[:, None, :]
        m = logits.max(axis=2, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(logits - m).sum(axis=2))
        ce = (lse - logits[:, rows, y]).sum(axis=1) / n
        out[start:start + chunk] = ce + 0.5 * lam * np.einsum("pjc,pjc->p", W, W)
    return out
