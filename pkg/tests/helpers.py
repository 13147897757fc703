"""Independent reference computations used as test oracles."""

import math

import numpy as np


def central_difference(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def reference_objective(X, y, W, b, lam):
    """Regularized mean cross-entropy written out loop by loop."""
    total = 0.0
    for xi, yi in zip(X, y):
        z = [sum(xi[j] * W[j, c] for j in range(len(xi))) + b[c] for c in range(W.shape[1])]
        m = max(z)
        lse = m + math.log(sum(math.exp(v - m) for v in z))
        total += lse - z[yi]
    return total / len(y) + 0.5 * lam * float(np.sum(W * W))


def normal_cdf_series(x, terms=200):
    """Phi(x) = 1/2 + 1/2 erf(x / sqrt 2) with erf from its Maclaurin series."""
    z = x / math.sqrt(2)
    s, term = 0.0, z
    for n in range(terms):
        s += term / (2 * n + 1)
        term *= -z * z / (n + 1)
    return 0.5 + s / math.sqrt(math.pi)


def spearman(a, b):
    """Spearman rank correlation (average ranks for ties)."""
    def ranks(v):
        v = np.asarray(v, dtype=float)
        order = np.argsort(v, kind="mergesort")
        r = np.empty(v.size)
        i = 0
        while i < v.size:
            j = i
            while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i:j + 1]] = 0.5 * (i + j)
            i = j + 1
        return r
    ra, rb = ranks(a), ranks(b)
    ra, rb = ra - ra.mean(), rb - rb.mean()
    return float(ra @ rb / math.sqrt((ra @ ra) * (rb @ rb)))
