"""Differentiable graph attack: optimize edge log-probabilities against a GCN surrogate.

Each iteration samples a sparse graph from the log-probability matrix Q with
the Gumbel top-k trick, adapts the surrogate by one gradient step on the
training loss, computes an approximate hyper-gradient of the attack loss with
respect to the sampled log-probabilities and takes a momentum step on Q.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .gcn import (
    EdgeGrad,
    LossKind,
    SurrogateParams,
    edge_loss_and_grads,
    loss_target,
    pseudo_labels,
    train_surrogate,
)
from .graph import Graph, GraphInputError

log = logging.getLogger(__name__)

FOA = "foa"
FDA = "fda"


@dataclass
class AttackConfig:
    iters: int = 200
    eta: float = 0.3
    alpha: float = 1e-3
    delta: Optional[float] = None  # None: relative probe 1e-2 / ||grad||
    gumbel_k: Optional[int] = None  # None: round(average degree)
    gumbel_tau: float = 1.0
    momentum: float = 0.9
    loss: str = LossKind.SELF_CE.value
    mode: str = FOA
    seed: int = 0
    eps: float = 1e-8
    include_original_edges: bool = True
    self_loss_includes_train: bool = False
    # step along dL/dp instead of dL/dq (an exponentiated-gradient step on P)
    precondition: bool = True
    # keep off-diagonal Q within [log eps, 0], i.e. probabilities in [eps, 1]
    box: bool = True
    # step on the summed rather than the mean attack loss, so eta does not depend on graph size
    sum_reduce: bool = True
    surrogate: dict = field(default_factory=dict)

    def validate(self):
        if self.iters < 1:
            raise GraphInputError(f"iters must be >= 1, got {self.iters}")
        if self.eta <= 0:
            raise GraphInputError("eta must be > 0")
        if self.alpha < 0:
            raise GraphInputError("alpha must be >= 0")
        if self.gumbel_tau <= 0:
            raise GraphInputError("gumbel_tau must be > 0")
        if self.gumbel_k is not None and self.gumbel_k < 1:
            raise GraphInputError("gumbel_k must be >= 1")
        if not 0 <= self.momentum < 1:
            raise GraphInputError("momentum must be in [0, 1)")
        if self.mode not in (FOA, FDA):
            raise GraphInputError(f"unknown mode {self.mode!r}")
        if self.mode == FDA and self.delta is not None and self.delta <= 0:
            raise GraphInputError("delta must be > 0 for fda")
        if self.eps <= 0:
            raise GraphInputError("eps must be > 0")
        LossKind(self.loss)
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AttackDiagnostics:
    attack_loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    sampling_error: list = field(default_factory=list)

    @property
    def avg_err(self) -> float:
        """Mean squared sampling error over the iterations."""
        e = np.asarray(self.sampling_error)
        return float(np.mean(e ** 2)) if e.size else 0.0

    def rows(self):
        for t, (a, g, s) in enumerate(zip(self.attack_loss, self.grad_norm, self.sampling_error)):
            yield t, a, g, s


@dataclass
class SampledGraph:
    """Sparse graph drawn from Q.

    ``selected[i]`` holds the neighbours picked by node i. ``pairs`` is the
    symmetrized union of the picks (plus any forced edges) as ``i < j`` rows,
    and ``q`` the log-probabilities at those pairs.
    """

    num_nodes: int
    selected: np.ndarray
    pairs: np.ndarray
    q: np.ndarray

    def weights(self) -> np.ndarray:
        return np.exp(self.q)

    def weighted_adjacency(self) -> np.ndarray:
        w = np.zeros((self.num_nodes, self.num_nodes))
        w[self.pairs[:, 0], self.pairs[:, 1]] = self.weights()
        w[self.pairs[:, 1], self.pairs[:, 0]] = self.weights()
        return w

    def binarized(self) -> np.ndarray:
        return (self.weighted_adjacency() > 0).astype(np.float64)

    def support_mask(self) -> np.ndarray:
        m = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        m[self.pairs[:, 0], self.pairs[:, 1]] = True
        m[self.pairs[:, 1], self.pairs[:, 0]] = True
        return m


def init_log_prob(a_orig: Graph, eps: float = 1e-8) -> np.ndarray:
    """Q0 = log(A + eps); the diagonal stays at log(eps)."""
    if not eps > 0:
        raise GraphInputError(f"eps must be > 0, got {eps}")
    return np.log(a_orig.adjacency() + eps)


def gumbel_noise(shape, rng) -> np.ndarray:
    u = rng.random(shape)
    # u == 0 has probability ~2^-53; nudge it to keep the noise finite
    u = np.where(u == 0.0, np.finfo(float).tiny, u)
    return -np.log(-np.log(u))


def gumbel_top_k_sample(Q: np.ndarray, k: int, tau: float = 1.0, rng=None,
                        include_edges: Optional[np.ndarray] = None,
                        noise: bool = True) -> SampledGraph:
    """Pick ``min(k, N-1)`` neighbours per node by perturbed log-probability.

    Node i keeps the top entries of ``(g_ij + Q_ij) / tau`` over ``j != i``
    where ``g`` is standard Gumbel noise; ``noise=False`` drops the noise.
    ``include_edges`` (an ``(M, 2)`` array) is merged into the sampled pairs.
    """
    n = Q.shape[0]
    k = int(min(k, n - 1))
    if n < 2 or k < 1:
        empty = np.zeros((0, 2), dtype=np.int64)
        return SampledGraph(n, np.zeros((n, 0), dtype=np.int64), empty, np.zeros(0))
    scores = Q.copy()
    if noise:
        rng = np.random.default_rng(rng)
        scores += gumbel_noise(Q.shape, rng)
    scores /= tau
    np.fill_diagonal(scores, -np.inf)
    if k == n - 1:
        selected = np.array([np.delete(np.arange(n), i) for i in range(n)])
    else:
        selected = np.argpartition(-scores, k - 1, axis=1)[:, :k]
        selected = np.sort(selected, axis=1)
    rows = np.repeat(np.arange(n), k)
    cols = selected.ravel()
    pair_list = [np.stack([np.minimum(rows, cols), np.maximum(rows, cols)], axis=1)]
    if include_edges is not None and len(include_edges):
        pair_list.append(np.asarray(include_edges, dtype=np.int64).reshape(-1, 2))
    pairs = np.unique(np.concatenate(pair_list), axis=0)
    return SampledGraph(n, selected, pairs, Q[pairs[:, 0], pairs[:, 1]].copy())


def sampling_error(Q: np.ndarray, sampled: SampledGraph) -> float:
    """||q_tilde - q||_2 where q_tilde zeroes the unsampled off-diagonal entries."""
    off = Q.copy()
    np.fill_diagonal(off, 0.0)
    off[sampled.support_mask()] = 0.0
    return float(np.sqrt(np.sum(off ** 2)))


def single_step_adapt(theta: SurrogateParams, sampled: SampledGraph, alpha: float,
                      features, labels, split) -> SurrogateParams:
    """theta - alpha * grad of the training loss on the sampled weighted graph."""
    if alpha < 0:
        raise GraphInputError("alpha must be >= 0")
    if alpha == 0:
        return theta.copy()
    _, _, d_w1, d_w2 = edge_loss_and_grads(theta, features, sampled.pairs, sampled.q,
                                           labels, split.train)
    if not (np.all(np.isfinite(d_w1)) and np.all(np.isfinite(d_w2))):
        raise RuntimeError("non-finite gradient in single-step adaptation")
    return theta.axpy(-alpha, d_w1, d_w2)


def _attack_grads(theta_hat, sampled, features, target):
    """Loss, d_q and d_theta of the attack loss (the negated target loss)."""
    labels, mask = target
    loss, d_q, d_w1, d_w2 = edge_loss_and_grads(theta_hat, features, sampled.pairs, sampled.q,
                                                labels, mask)
    return -loss, -d_q, -d_w1, -d_w2


def hyper_gradient_foa(theta_hat: SurrogateParams, sampled: SampledGraph, features,
                       target, scale: float = 1.0) -> EdgeGrad:
    """First-order hyper-gradient: the direct gradient of the attack loss w.r.t. q.

    ``target`` is the ``(labels, mask)`` pair of the attacked loss.
    """
    _, d_q, _, _ = _attack_grads(theta_hat, sampled, features, target)
    return EdgeGrad(sampled.pairs, scale * d_q)


def hyper_gradient_fda(theta: SurrogateParams, theta_hat: SurrogateParams, sampled: SampledGraph,
                       alpha: float, delta: Optional[float], features, labels, split,
                       target) -> EdgeGrad:
    """Hyper-gradient with the mixed second-order term by central differences.

    The term ``d2 L_train / dtheta dq . v`` with ``v`` the attack gradient in
    theta is replaced by ``(g_q(theta + delta v) - g_q(theta - delta v)) / 2 delta``.
    """
    _, d_q, v1, v2 = _attack_grads(theta_hat, sampled, features, target)
    if alpha == 0:
        return EdgeGrad(sampled.pairs, d_q)
    v_norm = np.sqrt(np.sum(v1 ** 2) + np.sum(v2 ** 2))
    if v_norm == 0:
        return EdgeGrad(sampled.pairs, d_q)
    if delta is None:
        delta = 1e-2 / v_norm
    if not delta > 0:
        raise GraphInputError("delta must be > 0")
    hvp = fda_term(theta, sampled, delta, (v1, v2), features, labels, split)
    if not np.all(np.isfinite(hvp)):
        raise RuntimeError(f"non-finite finite-difference probe at delta={delta:g}; try a smaller delta")
    return EdgeGrad(sampled.pairs, d_q - alpha * hvp)


def fda_term(theta, sampled, delta, direction, features, labels, split) -> np.ndarray:
    """Central-difference estimate of the mixed Hessian-vector product on the training loss."""
    v1, v2 = direction
    plus = theta.axpy(delta, v1, v2)
    minus = theta.axpy(-delta, v1, v2)
    _, g_plus, _, _ = edge_loss_and_grads(plus, features, sampled.pairs, sampled.q, labels,
                                          split.train, want_params=False)
    _, g_minus, _, _ = edge_loss_and_grads(minus, features, sampled.pairs, sampled.q, labels,
                                           split.train, want_params=False)
    return (g_plus - g_minus) / (2.0 * delta)


def densify(d_q, n: int) -> np.ndarray:
    if isinstance(d_q, EdgeGrad):
        out = np.zeros((n, n))
        i, j = d_q.pairs[:, 0], d_q.pairs[:, 1]
        out[i, j] = d_q.values
        out[j, i] = d_q.values
        return out
    return np.asarray(d_q, dtype=np.float64)


def precondition_grad(Q: np.ndarray, d_q: EdgeGrad) -> EdgeGrad:
    """Divide each entry by exp(q): the gradient with respect to the edge weight.

    Taking plain steps in Q with this direction is multiplicative-weights
    descent on P, so entries starting at log(eps) move at the same rate as
    existing edges instead of ``eps`` times slower.
    """
    p = np.exp(Q[d_q.pairs[:, 0], d_q.pairs[:, 1]])
    return EdgeGrad(d_q.pairs, d_q.values / p)


def update_q(Q: np.ndarray, d_q, eta: float, momentum: float = 0.0, buffer=None, bounds=None):
    """Momentum step ``Q - eta * (momentum * buffer + d_q)`` followed by symmetrization.

    ``bounds=(lo, hi)`` clips the off-diagonal entries. The diagonal keeps its
    value (log eps). Returns ``(Q_new, buffer_new)``.
    """
    if eta <= 0:
        raise GraphInputError("eta must be > 0")
    n = Q.shape[0]
    grad = densify(d_q, n)
    buf = grad if buffer is None else momentum * buffer + grad
    diag = np.diag(Q).copy()
    q_new = Q - eta * buf
    q_new = 0.5 * (q_new + q_new.T)
    if bounds is not None:
        np.clip(q_new, bounds[0], bounds[1], out=q_new)
    np.fill_diagonal(q_new, diag)
    return q_new, buf


def default_k(g: Graph) -> int:
    return max(1, int(round(2.0 * g.num_edges / max(g.num_nodes, 1))))


@contextlib.contextmanager
def deterministic_blas(enabled: bool = True):
    """Pin BLAS to one thread so floating-point reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


@dataclass
class AttackResult:
    Q: np.ndarray
    diagnostics: AttackDiagnostics
    surrogate: SurrogateParams
    pseudo: np.ndarray
    k: int


def run_attack(g: Graph, features, labels, split, cfg: AttackConfig = None,
               surrogate: Optional[SurrogateParams] = None, deterministic: bool = True,
               callback=None) -> AttackResult:
    """Optimize the log-probability matrix for ``cfg.iters`` iterations.

    The perturbation budget is not enforced here; see :mod:`dga.poison`.
    """
    cfg = (cfg or AttackConfig()).validate()
    rng = np.random.default_rng(cfg.seed)
    labels = np.asarray(labels)
    with deterministic_blas(deterministic):
        if surrogate is None:
            surrogate = train_surrogate(g, features, labels, split, cfg.surrogate,
                                        rng=np.random.default_rng([cfg.seed, 1]))
        pseudo = pseudo_labels(surrogate, g, features, labels, split.train)
        target = loss_target(cfg.loss, labels, split, pseudo, cfg.self_loss_includes_train)
        k = cfg.gumbel_k or default_k(g)
        forced = g.edges if cfg.include_original_edges else None

        Q = init_log_prob(g, cfg.eps)
        bounds = (float(np.log(cfg.eps)), 0.0) if cfg.box else None
        buf = None
        diag = AttackDiagnostics()
        for t in range(cfg.iters):
            sampled = gumbel_top_k_sample(Q, k, cfg.gumbel_tau, rng, include_edges=forced)
            theta_hat = single_step_adapt(surrogate, sampled, cfg.alpha, features, labels, split)
            atk_loss, d_q, _, _ = _attack_grads(theta_hat, sampled, features, target)
            if cfg.mode == FOA:
                grad = EdgeGrad(sampled.pairs, d_q)
            else:
                grad = hyper_gradient_fda(surrogate, theta_hat, sampled, cfg.alpha, cfg.delta,
                                          features, labels, split, target)
            diag.attack_loss.append(float(atk_loss))
            diag.grad_norm.append(grad.norm())
            diag.sampling_error.append(sampling_error(Q, sampled))
            step = precondition_grad(Q, grad) if cfg.precondition else grad
            if cfg.sum_reduce:
                step = step.scaled(float(len(target[1])))
            Q, buf = update_q(Q, step, cfg.eta, cfg.momentum, buf, bounds)
            if callback is not None:
                callback(t, Q, sampled, grad)
    return AttackResult(Q, diag, surrogate, pseudo, k)
