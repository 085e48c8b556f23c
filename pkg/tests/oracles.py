"""Reference implementations the tests compare against.

These are deliberately naive and share no code with the package.
"""
import math

import numpy as np


def naive_distance_matrix(x):
    n = len(x)
    out = [[0.0] * n for _ in range(n)]
    for i in range(n):
        for j in range(n):
            out[i][j] = math.sqrt(sum((a - b) ** 2 for a, b in zip(x[i], x[j])))
    return np.array(out)


def prim_mst_weights(dist):
    """Edge weights of a minimum spanning tree, by O(n^2) Prim."""
    d = np.asarray(dist)
    n = len(d)
    if n < 2:
        return []
    in_tree = [False] * n
    best = [math.inf] * n
    best[0] = 0.0
    weights = []
    for step in range(n):
        u = min((i for i in range(n) if not in_tree[i]), key=lambda i: best[i])
        in_tree[u] = True
        if step > 0:
            weights.append(best[u])
        for v in range(n):
            if not in_tree[v] and d[u][v] < best[v]:
                best[v] = d[u][v]
    return weights


def numeric_grad(f, x, h=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def brute_auroc(scores, positive):
    pos = [s for s, p in zip(scores, positive) if p]
    neg = [s for s, p in zip(scores, positive) if not p]
    total = 0.0
    for a in pos:
        for b in neg:
            total += 1.0 if a > b else 0.5 if a == b else 0.0
    return total / (len(pos) * len(neg))


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class FrozenScores:
    """Stands in for a fitted Gaussian with fixed per-instance scores."""

    def __init__(self, scores):
        self.scores = np.asarray(scores)

    def mahalanobis(self, z):
        return self.scores


def model_grad_error(model, loss_of):
    """Max relative error between backward and central differences over all parameters."""
    model.zero_grad()
    loss_of().backward()
    worst = 0.0
    for p in model.parameters():
        analytic = p.grad.copy()

        def f(a, p=p):
            saved = p.data
            p.data = a
            try:
                return loss_of().item()
            finally:
                p.data = saved

        worst = max(worst, rel_error(analytic, numeric_grad(f, p.data.copy())))
    return worst
