"""End-to-end poisoning: attack, score, sample a budgeted flip set."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .attack import FDA, FOA, AttackConfig, AttackResult, deterministic_blas, run_attack
from .gcn import cross_entropy, forward, loss_target, train_surrogate
from .graph import Graph, GraphInputError, PerturbationSet, apply_perturbations, gcn_normalize
from .poison import (CLAMP, best_of_samples, budget_from_rate, dice_attack, difference_scores,
                     sample_perturbations)

DICE = "dice"
METHODS = (FOA, FDA, DICE)


@dataclass
class PoisonResult:
    flips: PerturbationSet
    poisoned: Graph
    budget: int
    attack: Optional[AttackResult] = None
    candidate_scores: Optional[list] = None


def retrain_evaluator(g, features, labels, split, target, seed=0, epochs=50):
    """Score a candidate by the target loss of a surrogate retrained on the poisoned graph."""
    tlabels, mask = target

    def evaluate(flips, index):
        poisoned = apply_perturbations(g, flips)
        theta = train_surrogate(poisoned, features, labels, split, {"epochs": epochs},
                                rng=np.random.default_rng([seed, 2, index]))
        logits = forward(theta, features, gcn_normalize(poisoned.sparse_adjacency()))
        return cross_entropy(logits, tlabels, mask)

    return evaluate


def poison(g: Graph, features, labels, split, method: str = FOA, budget_rate: float = 0.05,
           cfg: AttackConfig = None, samples: int = 1, score_to_prob: str = CLAMP,
           evaluator=None, deterministic: bool = True) -> PoisonResult:
    """Produce a poisoned graph with exactly ``round(budget_rate * |E|)`` flips.

    For ``foa``/``fda`` the attack runs first, then ``samples`` candidate flip
    sets are drawn from the score matrix and the one with the highest
    ``evaluator`` score is kept (by default the self-training loss after a
    50-epoch surrogate retrain). ``dice`` ignores ``cfg`` apart from the seed.
    """
    if method not in METHODS:
        raise GraphInputError(f"unknown method {method!r}; expected one of {METHODS}")
    cfg = cfg or AttackConfig()
    budget = budget_from_rate(budget_rate, g.num_edges)
    labels = np.asarray(labels)
    if method == DICE:
        flips = dice_attack(g, labels, budget, rng=np.random.default_rng([cfg.seed, 3]))
        return PoisonResult(flips, apply_perturbations(g, flips), budget)

    cfg = replace(cfg, mode=method)
    result = run_attack(g, features, labels, split, cfg, deterministic=deterministic)
    scores = difference_scores(result.Q, g)
    rng = np.random.default_rng([cfg.seed, 4])
    if samples == 1 and evaluator is None:
        flips, cand = sample_perturbations(scores, budget, rng, g, score_to_prob), None
    else:
        if evaluator is None:
            target = loss_target(cfg.loss, labels, split, result.pseudo, cfg.self_loss_includes_train)
            evaluator = retrain_evaluator(g, features, labels, split, target, seed=cfg.seed)
        with deterministic_blas(deterministic):
            flips, _, cand = best_of_samples(scores, budget, samples, evaluator, rng, g,
                                             score_to_prob)
    return PoisonResult(flips, apply_perturbations(g, flips), budget, result, cand)
