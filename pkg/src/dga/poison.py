"""Turn a learned edge-probability map into a budgeted set of edge flips."""

from __future__ import annotations

import logging
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .graph import ADD, REMOVE, Flip, Graph, GraphInputError, PerturbationSet, make_flips

log = logging.getLogger(__name__)

CLAMP = "clamp"
SOFTMAX = "softmax"


def difference_scores(Q: np.ndarray, a_orig: Graph) -> np.ndarray:
    """S = (P_bar - A) * (1 - 2A) with P_bar the symmetrized exp(Q) clipped to [0, 1].

    Large S marks a non-edge the attack wants to add or an edge it wants gone.
    The diagonal is zeroed.
    """
    if Q.shape != (a_orig.num_nodes, a_orig.num_nodes):
        raise GraphInputError(f"Q shape {Q.shape} does not match graph with {a_orig.num_nodes} nodes")
    p = np.exp(Q)
    p_bar = np.clip(0.5 * (p + p.T), 0.0, 1.0)
    a = a_orig.adjacency()
    s = (p_bar - a) * (1.0 - 2.0 * a)
    np.fill_diagonal(s, 0.0)
    return s


def _upper(n):
    return np.triu_indices(n, k=1)


def sample_perturbations(S: np.ndarray, delta: int, rng=None, a_orig: Graph = None,
                         score_to_prob: str = CLAMP) -> PerturbationSet:
    """Draw ``delta`` distinct pairs from the upper triangle without replacement.

    Draws are sequential with renormalization, proportional to ``max(S, 0)``
    (or ``exp(S)`` for ``score_to_prob="softmax"``). This is done in one pass
    with Gumbel keys on the log-weights, which has the same distribution.
    If fewer than ``delta`` pairs have positive weight, the top ``delta``
    pairs by score are returned instead.
    """
    n = S.shape[0]
    iu, ju = _upper(n)
    if delta < 0 or delta > iu.size:
        raise GraphInputError(f"budget {delta} outside [0, {iu.size}]")
    if a_orig is None:
        raise GraphInputError("a_orig is required to label flips")
    if delta == 0:
        return PerturbationSet()
    scores = S[iu, ju]
    if score_to_prob == CLAMP:
        weights = np.maximum(scores, 0.0)
        with np.errstate(divide="ignore"):
            logw = np.log(weights)
    elif score_to_prob == SOFTMAX:
        logw = scores - scores.max()
    else:
        raise GraphInputError(f"unknown score_to_prob {score_to_prob!r}")
    support = int(np.count_nonzero(np.isfinite(logw)))
    if support < delta:
        log.warning("only %d pairs have positive score for a budget of %d; "
                    "taking the top-%d pairs by score", support, delta, delta)
        chosen = np.argsort(-scores, kind="stable")[:delta]
    else:
        rng = np.random.default_rng(rng)
        u = rng.random(scores.size)
        u = np.where(u == 0.0, np.finfo(float).tiny, u)
        keys = logw - np.log(-np.log(u))
        chosen = np.argpartition(-keys, delta - 1)[:delta]
        chosen = chosen[np.argsort(-keys[chosen], kind="stable")]
    return make_flips(zip(iu[chosen], ju[chosen]), a_orig)


def best_of_samples(S: np.ndarray, delta: int, repeats: int, evaluator, rng=None,
                    a_orig: Graph = None, score_to_prob: str = CLAMP):
    """Draw ``repeats`` candidate flip sets and keep the most damaging one.

    ``evaluator(flips, index)`` returns an attack score where larger means a
    stronger attack. Ties keep the earliest candidate. Returns
    ``(flips, score, all_scores)``.
    """
    if repeats < 1:
        raise GraphInputError("repeats must be >= 1")
    rng = np.random.default_rng(rng)
    best, best_score, scores = None, -np.inf, []
    for r in range(repeats):
        cand = sample_perturbations(S, delta, rng, a_orig, score_to_prob)
        try:
            score = float(evaluator(cand, r))
        except Exception:
            log.error("evaluator failed on candidate %d; scores so far: %s", r, scores)
            raise
        scores.append(score)
        if score > best_score:
            best, best_score = cand, score
    return best, best_score, scores


def dice_attack(g: Graph, labels, delta: int, rng=None) -> PerturbationSet:
    """Remove same-label edges or add different-label non-edges at random.

    Each flip picks either kind with probability 1/2; when one kind runs
    out the remaining flips come from the other.
    """
    rng = np.random.default_rng(rng)
    labels = np.asarray(labels)
    n = g.num_nodes
    e = g.edges
    same = e[labels[e[:, 0]] == labels[e[:, 1]]]
    removable = list(map(tuple, same[rng.permutation(len(same))])) if len(same) else []

    counts = np.bincount(labels, minlength=labels.max() + 1 if n else 0)
    cross_pairs = (n * (n - 1) // 2) - int(np.sum(counts * (counts - 1) // 2))
    cross_edges = len(e) - len(same)
    add_pool = cross_pairs - cross_edges
    if delta > len(removable) + add_pool:
        raise GraphInputError(f"DICE budget {delta} exceeds the {len(removable) + add_pool} candidates")

    out = PerturbationSet()
    chosen = set()
    n_added = 0
    while len(out) < delta:
        can_remove = len(removable) > 0
        can_add = n_added < add_pool
        if can_remove and (not can_add or rng.random() < 0.5):
            i, j = removable.pop()
            out.append(Flip(int(i), int(j), REMOVE))
            continue
        while True:
            i, j = rng.integers(0, n, size=2)
            if labels[i] == labels[j]:
                continue
            i, j = (int(i), int(j)) if i < j else (int(j), int(i))
            if (i, j) in chosen or g.has_edge(i, j):
                continue
            break
        chosen.add((i, j))
        out.append(Flip(i, j, ADD))
        n_added += 1
    return out


def budget_from_rate(rate: float, num_edges: int) -> int:
    """Round-half-up of ``rate * num_edges``, at least 1 for a positive rate."""
    if rate < 0:
        raise GraphInputError("budget rate must be >= 0")
    d = int((Decimal(str(rate)) * num_edges).quantize(Decimal(1), rounding=ROUND_HALF_UP))
    return max(d, 1) if rate > 0 else 0
