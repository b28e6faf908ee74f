"""Command-line interface: ``python -m dga <command> [options]``.

Commands
    ingest    load a dataset directory, keep its largest component, write it back out
    synth     generate a stochastic block model dataset
    attack    poison a graph and write the flips, Q matrix and diagnostics
    evaluate  train victims on a (poisoned) graph and write report.json
    stats     degree and edge-class statistics of a poisoned graph

Options may also come from a flat JSON file given with ``--config``; keys are
the long option names (``budget_rate`` or ``budget-rate``). Options given on
the command line win over the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from .attack import FDA, FOA, AttackConfig
from .data import (
    ensure_dir,
    generate_sbm,
    ingest,
    read_perturbations,
    stratified_split,
    write_dataset,
    write_diagnostics,
    write_edges,
    write_perturbations,
    write_qmatrix,
)
from .evaluate import JaccardDefense, attack_statistics, evaluate_victim, export_report, write_report
from .gcn import LossKind
from .graph import GraphInputError, PerturbationSet, apply_perturbations
from .pipeline import DICE, poison

log = logging.getLogger("dga")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
COMMANDS = ("ingest", "synth", "attack", "evaluate", "stats")
LOSSES = {"self": LossKind.SELF_CE.value, "train": LossKind.TRAIN_CE.value}

DEFAULTS = {
    "dataset": None,
    "synth": None,
    "method": FOA,
    "budget_rate": 0.05,
    "iters": AttackConfig.iters,
    "eta": AttackConfig.eta,
    "alpha": AttackConfig.alpha,
    "delta": None,
    "gumbel_k": None,
    "gumbel_tau": AttackConfig.gumbel_tau,
    "momentum": AttackConfig.momentum,
    "loss": "self",
    "samples": 1,
    "runs": 10,
    "defense": "none",
    "jaccard_threshold": 0.01,
    "seed": 0,
    "deterministic": False,
    "perturbations": None,
    "out": ".",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="dga", description="Differentiable graph structure poisoning toolkit.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat JSON file with option values")
    # unset flags stay out of the namespace so they do not mask the config file
    d = argparse.SUPPRESS
    p.add_argument("--dataset", default=d, help="dataset directory (edges.csv, labels.csv, ...)")
    p.add_argument("--synth", default=d, metavar="N,BLOCKS,P_IN,P_OUT",
                   help="generate a stochastic block model instead of reading a dataset")
    p.add_argument("--method", choices=(FOA, FDA, DICE), default=d)
    p.add_argument("--budget-rate", type=float, default=d)
    p.add_argument("--iters", type=int, default=d)
    p.add_argument("--eta", type=float, default=d)
    p.add_argument("--alpha", type=float, default=d)
    p.add_argument("--delta", type=float, default=d)
    p.add_argument("--gumbel-k", type=int, default=d)
    p.add_argument("--gumbel-tau", type=float, default=d)
    p.add_argument("--momentum", type=float, default=d)
    p.add_argument("--loss", choices=tuple(LOSSES), default=d)
    p.add_argument("--samples", type=int, default=d, help="best-of repeats for flip sampling")
    p.add_argument("--runs", type=int, default=d, help="victim training runs")
    p.add_argument("--defense", choices=("none", "jaccard"), default=d)
    p.add_argument("--jaccard-threshold", type=float, default=d)
    p.add_argument("--seed", type=int, default=d)
    p.add_argument("--deterministic", action="store_true", default=d)
    p.add_argument("--perturbations", default=d,
                   help="perturbations.csv to evaluate or describe (evaluate, stats)")
    p.add_argument("--out", default=d, help="output directory")
    return p


def resolve_options(ns: argparse.Namespace) -> dict:
    opts = dict(DEFAULTS)
    if ns.config:
        try:
            with open(ns.config) as fh:
                raw = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise GraphInputError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise GraphInputError("config file must hold a JSON object")
        for key, value in raw.items():
            key = key.replace("-", "_")
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            opts[key] = value
    for key, value in vars(ns).items():
        if key not in ("command", "config"):
            opts[key] = value
    if opts["method"] not in (FOA, FDA, DICE):
        raise UsageError(f"unknown method {opts['method']!r}")
    if opts["loss"] not in LOSSES:
        raise UsageError(f"unknown loss {opts['loss']!r}")
    return opts


def parse_synth(spec: str):
    try:
        n, blocks, p_in, p_out = spec.split(",")
        return int(n), int(blocks), float(p_in), float(p_out)
    except ValueError:
        raise GraphInputError(f"--synth expects n,blocks,p_in,p_out, got {spec!r}") from None


def load_inputs(opts):
    """Return ``(graph, features, labels, split, featureless)``."""
    if bool(opts["dataset"]) == bool(opts["synth"]):
        raise GraphInputError("give exactly one of --dataset or --synth")
    if opts["dataset"]:
        g, x, y, split, info = ingest(opts["dataset"], seed=opts["seed"])
        return g, x, y, split, info["featureless"]
    n, blocks, p_in, p_out = parse_synth(opts["synth"])
    g, x, y = generate_sbm(n, blocks, p_in, p_out, seed=opts["seed"])
    return g, x, y, stratified_split(y, opts["seed"]), False


def attack_config(opts) -> AttackConfig:
    return AttackConfig(
        iters=opts["iters"], eta=opts["eta"], alpha=opts["alpha"], delta=opts["delta"],
        gumbel_k=opts["gumbel_k"], gumbel_tau=opts["gumbel_tau"], momentum=opts["momentum"],
        loss=LOSSES[opts["loss"]], mode=opts["method"] if opts["method"] != DICE else FOA,
        seed=opts["seed"],
    ).validate()


def _poisoned(opts, g):
    """The graph described by --perturbations, or the clean graph."""
    if opts["perturbations"]:
        flips = read_perturbations(opts["perturbations"])
        return apply_perturbations(g, flips), flips, opts["method"]
    return g, PerturbationSet(), "clean"


def cmd_ingest(opts):
    if not opts["dataset"]:
        raise GraphInputError("ingest needs --dataset")
    g, x, y, split, info = ingest(opts["dataset"], seed=opts["seed"])
    out = ensure_dir(opts["out"])
    write_dataset(out, g, None if info["featureless"] else x, y, split)
    summary = {"num_nodes": g.num_nodes, "num_edges": g.num_edges,
               "num_classes": int(np.max(y)) + 1, "featureless": info["featureless"],
               "raw_num_nodes": info["raw_num_nodes"]}
    with open(out / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    print(json.dumps(summary))


def cmd_synth(opts):
    if not opts["synth"]:
        raise GraphInputError("synth needs --synth n,blocks,p_in,p_out")
    g, x, y, split, _ = load_inputs(opts)
    write_dataset(ensure_dir(opts["out"]), g, x, y, split)
    print(json.dumps({"num_nodes": g.num_nodes, "num_edges": g.num_edges}))


def cmd_attack(opts):
    g, x, y, split, _ = load_inputs(opts)
    cfg = attack_config(opts)
    if opts["samples"] < 1:
        raise GraphInputError("--samples must be >= 1")
    res = poison(g, x, y, split, method=opts["method"], budget_rate=opts["budget_rate"], cfg=cfg,
                 samples=opts["samples"], deterministic=bool(opts["deterministic"]))
    out = ensure_dir(opts["out"])
    write_perturbations(res.flips, out / "perturbations.csv")
    write_edges(res.poisoned, out / "poisoned_edges.csv")
    if res.attack is not None:
        write_qmatrix(res.attack.Q, out / "qmatrix.bin")
        write_diagnostics(res.attack.diagnostics, out / "diagnostics.csv")
    meta = {"method": opts["method"], "budget_rate": opts["budget_rate"], "budget": res.budget,
            "counts": res.flips.counts(), "options": opts}
    if res.attack is not None:
        meta["avg_err"] = res.attack.diagnostics.avg_err
        meta["gumbel_k"] = res.attack.k
    with open(out / "attack.json", "w") as fh:
        json.dump(meta, fh, indent=2, default=str)
    print(json.dumps({"budget": res.budget, **res.flips.counts()}))


def cmd_evaluate(opts):
    g, x, y, split, featureless = load_inputs(opts)
    defense = None
    if opts["defense"] == "jaccard":
        if featureless:
            raise GraphInputError("the Jaccard defense needs node features; this dataset has none")
        defense = JaccardDefense(x, opts["jaccard_threshold"])
    poisoned, flips, method = _poisoned(opts, g)
    if opts["runs"] < 1:
        raise GraphInputError("--runs must be >= 1")
    report = evaluate_victim(
        poisoned, x, y, split, runs=opts["runs"], base_seed=opts["seed"], defense=defense,
        method=method, budget_rate=opts["budget_rate"] if flips else 0.0, budget=len(flips),
        seed=opts["seed"], config=opts,
    )
    if not report.accuracies:
        raise RuntimeError("every victim run diverged")
    write_report(report, ensure_dir(opts["out"]) / "report.json")
    print(json.dumps({"mean": report.mean, "std": report.std, "runs": report.runs}))


def cmd_stats(opts):
    g, x, y, split, _ = load_inputs(opts)
    poisoned, _, _ = _poisoned(opts, g)
    stats = attack_statistics(g, poisoned, x, y)
    export_report(None, stats, ensure_dir(opts["out"]))
    print(json.dumps({"ks_statistic": stats.ks_statistic,
                      "added_different_label": stats.different_label_fraction("added"),
                      "removed_different_label": stats.different_label_fraction("removed")}))


HANDLERS = {"ingest": cmd_ingest, "synth": cmd_synth, "attack": cmd_attack,
            "evaluate": cmd_evaluate, "stats": cmd_stats}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        ns = build_parser().parse_args(argv)
        opts = resolve_options(ns)
        HANDLERS[ns.command](opts)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INPUT
    except (GraphInputError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"dga: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        print(f"dga: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
