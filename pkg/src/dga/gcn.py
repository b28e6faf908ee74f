"""Two-layer GCN with hand-written backpropagation.

logits = Â · relu(Â · X · W1) · W2

Gradients are available with respect to the weights and with respect to the
log-weights of a sparse set of (symmetric) edges, which is what the attack
optimizes.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph, GraphInputError, gcn_normalize

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace or []


class LossKind(str, enum.Enum):
    TRAIN_CE = "train_ce"
    SELF_CE = "self_ce"


@dataclass
class SurrogateParams:
    W1: np.ndarray
    W2: np.ndarray
    hyper: dict = field(default_factory=dict)
    trace: list = field(default_factory=list)

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[1]

    def copy(self) -> "SurrogateParams":
        return SurrogateParams(self.W1.copy(), self.W2.copy(), dict(self.hyper), list(self.trace))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.W2.ravel()])

    def axpy(self, a: float, d_W1: np.ndarray, d_W2: np.ndarray) -> "SurrogateParams":
        """Return ``self + a * (d_W1, d_W2)`` as new params."""
        return SurrogateParams(self.W1 + a * d_W1, self.W2 + a * d_W2, dict(self.hyper))

    def to_json(self) -> dict:
        return {
            "W1": {"shape": list(self.W1.shape), "data": self.W1.ravel().tolist()},
            "W2": {"shape": list(self.W2.shape), "data": self.W2.ravel().tolist()},
            "hyper": self.hyper,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SurrogateParams":
        w1 = np.array(obj["W1"]["data"], dtype=np.float64).reshape(obj["W1"]["shape"])
        w2 = np.array(obj["W2"]["data"], dtype=np.float64).reshape(obj["W2"]["shape"])
        return cls(w1, w2, dict(obj.get("hyper", {})))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "SurrogateParams":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class EdgeGrad:
    """Gradient over unordered pairs; ``pairs[m] = (i, j)`` with ``i < j``."""

    pairs: np.ndarray
    values: np.ndarray

    def as_dict(self) -> dict:
        return {(int(i), int(j)): float(v) for (i, j), v in zip(self.pairs, self.values)}

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __neg__(self):
        return EdgeGrad(self.pairs, -self.values)

    def scaled(self, c: float) -> "EdgeGrad":
        return EdgeGrad(self.pairs, c * self.values)


@dataclass
class GradBundle:
    d_W1: Optional[np.ndarray] = None
    d_W2: Optional[np.ndarray] = None
    d_q: Optional[EdgeGrad] = None
    loss: float = float("nan")


def glorot_init(d_in: int, d_out: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-limit, limit, size=(d_in, d_out))


def init_params(n_features: int, hidden: int, n_classes: int, rng) -> SurrogateParams:
    return SurrogateParams(glorot_init(n_features, hidden, rng), glorot_init(hidden, n_classes, rng))


def _check_shapes(params, features, norm_adj):
    n = norm_adj.shape[0]
    if norm_adj.shape != (n, n):
        raise GraphInputError(f"normalized adjacency must be square, got {norm_adj.shape}")
    if features.shape[0] != n:
        raise GraphInputError(f"features have {features.shape[0]} rows, graph has {n} nodes")
    if features.shape[1] != params.W1.shape[0]:
        raise GraphInputError(f"W1 expects {params.W1.shape[0]} features, got {features.shape[1]}")
    if params.W1.shape[1] != params.W2.shape[0]:
        raise GraphInputError(f"W1 {params.W1.shape} and W2 {params.W2.shape} do not chain")


def _forward(params, features, norm_adj, drop_in=None, drop_hidden=None):
    x = features
    if drop_in is not None:
        x = x.multiply(drop_in) if sp.issparse(x) else x * drop_in
    xw = np.asarray(x @ params.W1)
    h1 = np.asarray(norm_adj @ xw)
    z1 = np.maximum(h1, 0.0)
    if drop_hidden is not None:
        z1 = z1 * drop_hidden
    zw = z1 @ params.W2
    logits = np.asarray(norm_adj @ zw)
    return {"x": x, "xw": xw, "h1": h1, "z1": z1, "zw": zw, "logits": logits}


def forward(params: SurrogateParams, features, norm_adj) -> np.ndarray:
    """Logits ``Â relu(Â X W1) W2`` of shape (N, C)."""
    _check_shapes(params, features, norm_adj)
    return _forward(params, features, norm_adj)["logits"]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _as_index(mask, n=None) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype == bool:
        return np.flatnonzero(m)
    return m.astype(np.int64).ravel()


def cross_entropy(logits: np.ndarray, labels, mask) -> float:
    """Mean negative log-likelihood over the masked nodes."""
    idx = _as_index(mask)
    if idx.size == 0:
        raise GraphInputError("cross_entropy needs a non-empty mask")
    lp = log_softmax(logits[idx])
    return float(-lp[np.arange(idx.size), np.asarray(labels)[idx]].mean())


def _dlogits(logits, labels, idx):
    g = np.zeros_like(logits)
    z = logits[idx] - logits[idx].max(axis=1, keepdims=True)
    prob = np.exp(z)
    prob /= prob.sum(axis=1, keepdims=True)
    prob[np.arange(idx.size), np.asarray(labels)[idx]] -= 1.0
    g[idx] = prob / idx.size
    return g


def _backward(params, cache, norm_adj, g):
    """Backprop ``g = dL/dlogits``; returns (dW1, dW2, dH1) with dH1 = dL/d(Â X W1)."""
    d_zw = np.asarray(norm_adj.T @ g)
    d_w2 = cache["z1"].T @ d_zw
    d_z1 = d_zw @ params.W2.T
    d_h1 = d_z1 * (cache["h1"] > 0)
    if "drop_hidden" in cache:
        d_h1 = d_h1 * cache["drop_hidden"]
    d_xw = np.asarray(norm_adj.T @ d_h1)
    x = cache["x"]
    d_w1 = np.asarray(x.T @ d_xw)
    return d_w1, d_w2, d_h1


def loss_and_grads(params, features, norm_adj, labels, mask, weight_decay=0.0,
                   dropout=0.0, rng=None):
    """Loss and weight gradients, optionally with dropout and L2 penalty.

    Dropout is only used by victim training; the attack path never sets it.
    """
    idx = _as_index(mask)
    if idx.size == 0:
        raise GraphInputError("loss mask is empty")
    drop_in = drop_hidden = None
    if dropout > 0:
        keep = 1.0 - dropout
        n, d = features.shape
        drop_in = (rng.random((n, d)) < keep) / keep
        drop_hidden = (rng.random((n, params.hidden_dim)) < keep) / keep
    cache = _forward(params, features, norm_adj, drop_in, drop_hidden)
    if drop_hidden is not None:
        cache["drop_hidden"] = drop_hidden
    logits = cache["logits"]
    loss = cross_entropy(logits, labels, idx)
    d_w1, d_w2, _ = _backward(params, cache, norm_adj, _dlogits(logits, labels, idx))
    if weight_decay:
        loss += 0.5 * weight_decay * (np.sum(params.W1 ** 2) + np.sum(params.W2 ** 2))
        d_w1 = d_w1 + weight_decay * params.W1
        d_w2 = d_w2 + weight_decay * params.W2
    return loss, d_w1, d_w2


def grad_params(params, features, norm_adj, labels, mask) -> GradBundle:
    """Gradients of the masked mean cross-entropy w.r.t. W1 and W2."""
    _check_shapes(params, features, norm_adj)
    loss, d_w1, d_w2 = loss_and_grads(params, features, norm_adj, labels, mask)
    return GradBundle(d_W1=d_w1, d_W2=d_w2, loss=loss)


def weighted_adjacency(num_nodes: int, pairs: np.ndarray, weights: np.ndarray) -> sp.csr_matrix:
    """Symmetric sparse matrix with ``weights[m]`` at both (i, j) and (j, i)."""
    rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
    data = np.concatenate([weights, weights])
    return sp.csr_matrix((data, (rows, cols)), shape=(num_nodes, num_nodes))


def edge_loss_and_grads(params, features, pairs, q_values, labels, mask, want_params=True):
    """Loss over the graph with weights ``exp(q)`` on ``pairs``, and its gradients.

    Returns ``(loss, d_q, d_W1, d_W2)``; ``d_q`` is aligned with ``pairs``.
    """
    n = features.shape[0]
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    q_values = np.asarray(q_values, dtype=np.float64)
    p = np.exp(q_values)
    w = weighted_adjacency(n, pairs, p)
    a_tilde = w + sp.identity(n, format="csr")
    deg = np.asarray(a_tilde.sum(axis=1)).ravel()
    s = 1.0 / np.sqrt(deg)
    a_hat = (sp.diags(s) @ a_tilde @ sp.diags(s)).tocsr()
    _check_shapes(params, features, a_hat)

    idx = _as_index(mask)
    cache = _forward(params, features, a_hat)
    logits = cache["logits"]
    loss = cross_entropy(logits, labels, idx)
    g = _dlogits(logits, labels, idx)
    d_w1, d_w2, d_h1 = _backward(params, cache, a_hat, g)

    # dL/dÂ_uv = g_u . zw_v + dh1_u . xw_v, needed on the support of Â only
    zw, xw = cache["zw"], cache["xw"]

    def d_ahat(u, v):
        return np.einsum("ij,ij->i", g[u], zw[v]) + np.einsum("ij,ij->i", d_h1[u], xw[v])

    i, j = pairs[:, 0], pairs[:, 1]
    diag = np.arange(n)
    d_ij, d_ji, d_ii = d_ahat(i, j), d_ahat(j, i), d_ahat(diag, diag)
    a_ij = p * s[i] * s[j]
    # dL/d deg_u = -1/2 s_u^2 * sum over row u and column u of dÂ * Â
    row_col = 2.0 * d_ii * s ** 2
    np.add.at(row_col, i, (d_ij + d_ji) * a_ij)
    np.add.at(row_col, j, (d_ij + d_ji) * a_ij)
    d_deg = -0.5 * s ** 2 * row_col
    d_w = (d_ij + d_ji) * s[i] * s[j] + d_deg[i] + d_deg[j]
    d_q = p * d_w
    if not want_params:
        d_w1 = d_w2 = None
    return loss, d_q, d_w1, d_w2


def grad_edge_logprobs(params, features, pairs, q_values, labels, mask) -> GradBundle:
    """Gradient of the masked loss w.r.t. the log-weights of the sampled pairs.

    Unsampled pairs have weight 0 and are not part of the result (their
    gradient is exactly zero by construction).
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    loss, d_q, _, _ = edge_loss_and_grads(params, features, pairs, q_values, labels, mask,
                                          want_params=False)
    return GradBundle(d_q=EdgeGrad(pairs, d_q), loss=loss)


class Adam:
    def __init__(self, shapes, lr=1e-2, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        out = []
        for k, (p, g) in enumerate(zip(params, grads)):
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            m_hat = self.m[k] / (1 - self.b1 ** self.t)
            v_hat = self.v[k] / (1 - self.b2 ** self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


def accuracy(logits, labels, idx) -> float:
    idx = _as_index(idx)
    return float(np.mean(np.argmax(logits[idx], axis=1) == np.asarray(labels)[idx]))


DEFAULT_HYPER = {"lr": 1e-2, "weight_decay": 5e-4, "epochs": 200, "hidden": 16, "dropout": 0.0}


def train_gcn(norm_adj, features, labels, split, hyper=None, rng=None, params=None) -> SurrogateParams:
    """Full-batch Adam training; keeps the weights of the best validation epoch.

    Ties in validation accuracy keep the earlier epoch. Without a validation
    set the last epoch is returned.
    """
    h = dict(DEFAULT_HYPER)
    h.update(hyper or {})
    rng = np.random.default_rng(rng)
    labels = np.asarray(labels)
    n_classes = int(labels.max()) + 1
    train, val = _as_index(split.train), _as_index(split.val)
    if train.size == 0:
        raise GraphInputError("training split is empty")
    if params is None:
        params = init_params(features.shape[1], int(h["hidden"]), n_classes, rng)
    params = SurrogateParams(params.W1.copy(), params.W2.copy(), h)
    opt = Adam([params.W1.shape, params.W2.shape], lr=h["lr"])
    best, best_acc = params.copy(), -1.0
    trace = []
    for epoch in range(int(h["epochs"])):
        loss, d_w1, d_w2 = loss_and_grads(params, features, norm_adj, labels, train,
                                          weight_decay=h["weight_decay"], dropout=h["dropout"], rng=rng)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite training loss at epoch {epoch}", trace)
        params.W1, params.W2 = opt.step([params.W1, params.W2], [d_w1, d_w2])
        logits = forward(params, features, norm_adj)
        entry = {"epoch": epoch, "train_loss": loss}
        if val.size:
            entry["val_loss"] = cross_entropy(logits, labels, val)
            entry["val_acc"] = accuracy(logits, labels, val)
            if entry["val_acc"] > best_acc:
                best_acc, best = entry["val_acc"], params.copy()
        else:
            best = params.copy()
        trace.append(entry)
    best.hyper = h
    best.trace = trace
    return best


def train_surrogate(g: Graph, features, labels, split, hyper=None, rng=None) -> SurrogateParams:
    """Train the attack surrogate on the clean graph (no dropout)."""
    h = dict(hyper or {})
    h.setdefault("dropout", 0.0)
    return train_gcn(gcn_normalize(g.sparse_adjacency()), features, labels, split, h, rng)


def pseudo_labels(params: SurrogateParams, g: Graph, features, labels, train_idx) -> np.ndarray:
    """Clean-graph predictions for every node, true labels on the training nodes.

    ``np.argmax`` returns the first maximum, so ties go to the lowest class.
    """
    logits = forward(params, features, gcn_normalize(g.sparse_adjacency()))
    out = np.argmax(logits, axis=1)
    idx = _as_index(train_idx)
    out[idx] = np.asarray(labels)[idx]
    return out


def loss_target(kind, labels, split, pseudo=None, self_loss_includes_train=False):
    """Labels and node mask for a loss kind."""
    kind = LossKind(kind)
    train = _as_index(split.train)
    if kind is LossKind.TRAIN_CE:
        return np.asarray(labels), train
    if pseudo is None:
        raise GraphInputError("self-training loss needs pseudo labels")
    n = len(pseudo)
    if self_loss_includes_train:
        return np.asarray(pseudo), np.arange(n)
    unl = np.setdiff1d(np.arange(n), train)
    return np.asarray(pseudo), unl
