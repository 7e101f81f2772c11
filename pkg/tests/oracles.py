"""Slow, obviously-correct reference implementations used as test oracles."""
import itertools

import numpy as np


def conv_loop(x, w, padding="valid"):
    x = np.asarray(x, np.float64)
    w = np.asarray(w, np.float64)
    n, m, tau, c_in, K = w.shape
    if padding == "same":
        pads = [(k // 2, (k - 1) // 2) for k in (n, m, tau)] + [(0, 0)]
        x = np.pad(x, pads)
    N, M, T, C = x.shape
    out = np.zeros((N - n + 1, M - m + 1, T - tau + 1, K))
    for a, b, c, k in itertools.product(*map(range, out.shape)):
        s = 0.0
        for i, j, l, ch in itertools.product(range(n), range(m), range(tau), range(c_in)):
            s += x[a + i, b + j, c + l, ch] * w[i, j, l, ch, k]
        out[a, b, c, k] = s
    return out


def pool_loop(x, kind, size):
    x = np.asarray(x, np.float64)
    N, M, T, C = x.shape
    dims = [-(-d // s) for d, s in zip((N, M, T), size)]
    out = np.zeros(dims + [C])
    for a, b, c, ch in itertools.product(*map(range, out.shape)):
        block = x[a * size[0]:(a + 1) * size[0], b * size[1]:(b + 1) * size[1],
                  c * size[2]:(c + 1) * size[2], ch]
        out[a, b, c, ch] = block.sum() if kind == "local_sum" else block.max()
    return out


def nonlin_loop(x, kind):
    x = np.asarray(x, np.float64)
    if kind == "relu":
        return np.where(x > 0, x, 0.0)
    if kind == "square":
        return x * x
    if kind == "sqrt":
        return np.sqrt(x)
    if kind == "softmax":
        out = np.empty_like(x)
        for idx in itertools.product(*map(range, x.shape[:3])):
            e = np.exp(x[idx] - x[idx].max())
            out[idx] = e / e.sum()
        return out
    return x


def fisher_loop(X, weights, means, variances):
    """Mean and variance gradients, one descriptor and one component at a time."""
    X = np.asarray(X, np.float64)
    N, D = X.shape
    K = len(weights)
    mu_block = np.zeros((K, D))
    var_block = np.zeros((K, D))
    for x in X:
        logp = np.array([np.log(weights[k]) - 0.5 * np.sum(np.log(2 * np.pi * variances[k])
                         + (x - means[k]) ** 2 / variances[k]) for k in range(K)])
        post = np.exp(logp - logp.max())
        post /= post.sum()
        for k in range(K):
            z = (x - means[k]) / np.sqrt(variances[k])
            mu_block[k] += post[k] * z
            var_block[k] += post[k] * (z ** 2 - 1)
    for k in range(K):
        mu_block[k] /= N * np.sqrt(weights[k])
        var_block[k] /= N * np.sqrt(2 * weights[k])
    return np.concatenate([mu_block.ravel(), var_block.ravel()])


def macc_loop(pred, truth):
    recalls = []
    for c in sorted(set(truth)):
        hit = total = 0
        for p, t in zip(pred, truth):
            if t == c:
                total += 1
                hit += p == c
        recalls.append(hit / total)
    return sum(recalls) / len(recalls)


def numeric_grad(f, W, h=1e-6):
    G = np.zeros_like(W)
    for idx in np.ndindex(W.shape):
        Wp, Wm = W.copy(), W.copy()
        Wp[idx] += h
        Wm[idx] -= h
        G[idx] = (f(Wp) - f(Wm)) / (2 * h)
    return G
