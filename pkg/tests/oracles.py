"""Independent reference computations used by the tests."""

import numpy as np


def dense_norm(w):
    a = w + np.eye(w.shape[0])
    s = 1.0 / np.sqrt(a.sum(1))
    return a * s[:, None] * s[None, :]


def dense_logits(W1, W2, x, a_hat):
    n = a_hat.shape[0]
    h = np.zeros((n, W1.shape[1]))
    ax = a_hat @ x
    for r in range(n):
        for c in range(W1.shape[1]):
            h[r, c] = max(0.0, sum(ax[r, k] * W1[k, c] for k in range(W1.shape[0])))
    return a_hat @ h @ W2


def nll(logits, labels, idx):
    total = 0.0
    for i in idx:
        z = logits[i]
        m = z.max()
        total += -(z[labels[i]] - m - np.log(np.exp(z - m).sum()))
    return total / len(idx)


def edge_loss(W1, W2, x, pairs, q, labels, idx):
    """Loss with weights exp(q) placed symmetrically at ``pairs``."""
    n = x.shape[0]
    w = np.zeros((n, n))
    for (i, j), v in zip(pairs, q):
        w[i, j] = w[j, i] = np.exp(v)
    return nll(dense_logits(W1, W2, x, dense_norm(w)), labels, idx)


def central_diff(f, x, step=1e-4):
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    for k in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[k] += step
        xm[k] -= step
        out[k] = (f(xp) - f(xm)) / (2 * step)
    return out


def rel_err(analytic, numeric):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)
