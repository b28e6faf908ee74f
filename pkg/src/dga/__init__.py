"""Structure-poisoning attacks on GCN node classifiers via differentiable edge sampling."""

from .attack import AttackConfig, AttackDiagnostics, run_attack
from .graph import Graph, GraphInputError, PerturbationSet, Split, apply_perturbations, build_graph
from .pipeline import PoisonResult, poison

__all__ = [
    "AttackConfig",
    "AttackDiagnostics",
    "Graph",
    "GraphInputError",
    "PerturbationSet",
    "PoisonResult",
    "Split",
    "apply_perturbations",
    "build_graph",
    "poison",
    "run_attack",
]

__version__ = "0.1.0"
