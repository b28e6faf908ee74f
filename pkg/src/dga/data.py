"""Dataset files, synthetic graphs, splits and the toolkit's output formats.

Directory layout read by :func:`ingest`::

    edges.csv          src,dst per line (0-indexed, duplicates tolerated)
    labels.csv         node,label per line
    features.csv       optional dense rows, or features.triplet (node,dim,value)
    split.json         optional {"train": [...], "val": [...], "test": [...]}
"""

from __future__ import annotations

import csv
import json
import os
import struct
from pathlib import Path

import numpy as np

from .graph import ADD, REMOVE, Flip, Graph, GraphInputError, PerturbationSet, Split, build_graph
from .graph import largest_connected_component


class DataFormatError(GraphInputError):
    def __init__(self, path, lineno, msg):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path, self.lineno = path, lineno


def _rows(path):
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            yield lineno, [c.strip() for c in line.split(",")]


def _int(path, lineno, s):
    try:
        return int(s)
    except ValueError:
        raise DataFormatError(path, lineno, f"expected an integer, got {s!r}") from None


def read_edges(path) -> np.ndarray:
    out = []
    for lineno, cols in _rows(path):
        if lineno == 1 and not cols[0].lstrip("-").isdigit():
            continue  # header
        if len(cols) != 2:
            raise DataFormatError(path, lineno, f"expected 'src,dst', got {len(cols)} fields")
        out.append((_int(path, lineno, cols[0]), _int(path, lineno, cols[1])))
    return np.array(out, dtype=np.int64).reshape(-1, 2)


def read_labels(path) -> dict:
    out = {}
    for lineno, cols in _rows(path):
        if lineno == 1 and not cols[0].lstrip("-").isdigit():
            continue
        if len(cols) != 2:
            raise DataFormatError(path, lineno, f"expected 'node,label', got {len(cols)} fields")
        out[_int(path, lineno, cols[0])] = _int(path, lineno, cols[1])
    return out


def read_features(path, num_nodes=None) -> np.ndarray:
    path = str(path)
    if path.endswith(".triplet"):
        trip = []
        for lineno, cols in _rows(path):
            if len(cols) != 3:
                raise DataFormatError(path, lineno, "expected 'node,dim,value'")
            try:
                trip.append((int(cols[0]), int(cols[1]), float(cols[2])))
            except ValueError:
                raise DataFormatError(path, lineno, f"bad triplet {cols}") from None
        n = num_nodes if num_nodes is not None else (max(t[0] for t in trip) + 1 if trip else 0)
        d = max(t[1] for t in trip) + 1 if trip else 0
        x = np.zeros((n, d))
        for i, j, v in trip:
            x[i, j] = v
        return x
    rows = []
    for lineno, cols in _rows(path):
        try:
            rows.append([float(c) for c in cols])
        except ValueError:
            raise DataFormatError(path, lineno, "non-numeric feature value") from None
        if rows and len(rows[-1]) != len(rows[0]):
            raise DataFormatError(path, lineno, "ragged feature row")
    x = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise GraphInputError(f"{path}: non-finite feature value")
    return x


def read_split(path) -> Split:
    with open(path) as fh:
        obj = json.load(fh)
    return Split(obj["train"], obj.get("val", []), obj["test"])


def write_split(split: Split, path):
    with open(path, "w") as fh:
        json.dump(split.to_json(), fh)


def stratified_split(labels, rng=None, ratios=(0.1, 0.1, 0.8)) -> Split:
    """Random per-class split into train/val/test with the given ratios.

    Classes with at least two nodes always get one training node and keep one
    node for testing, so tiny graphs still yield a usable split.
    """
    rng = np.random.default_rng(rng)
    labels = np.asarray(labels)
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        n_tr = int(round(ratios[0] * idx.size))
        n_va = int(round(ratios[1] * idx.size))
        if idx.size >= 2:
            n_tr = min(max(n_tr, 1), idx.size - 1)
            n_va = min(n_va, idx.size - 1 - n_tr)
        train.append(idx[:n_tr])
        val.append(idx[n_tr:n_tr + n_va])
        test.append(idx[n_tr + n_va:])
    return Split(np.sort(np.concatenate(train)), np.sort(np.concatenate(val)),
                 np.sort(np.concatenate(test)))


def ingest(directory, seed=0, identity_features=True):
    """Load a dataset directory and restrict it to its largest component.

    Returns ``(graph, features, labels, split, info)``. ``info`` notes whether
    the features were synthesized (identity) and the LCC id map.
    """
    d = Path(directory)
    edges_path, labels_path = d / "edges.csv", d / "labels.csv"
    for p in (edges_path, labels_path):
        if not p.exists():
            raise GraphInputError(f"missing required file {p}")
    edges = read_edges(edges_path)
    lab = read_labels(labels_path)
    n = max([int(edges.max()) + 1 if edges.size else 0, max(lab) + 1 if lab else 0])
    labels = -np.ones(n, dtype=np.int64)
    for node, c in lab.items():
        labels[node] = c
    if (labels < 0).any():
        raise GraphInputError(f"{labels_path}: {int((labels < 0).sum())} nodes have no label")

    feats, featureless = None, False
    if (d / "features.csv").exists():
        feats = read_features(d / "features.csv")
    elif (d / "features.triplet").exists():
        feats = read_features(d / "features.triplet", num_nodes=n)
    if feats is None:
        featureless = True
        feats = np.eye(n) if identity_features else None
    elif feats.shape[0] != n:
        raise GraphInputError(f"features have {feats.shape[0]} rows, expected {n}")

    g = build_graph(edges, n)
    g, feats, labels, id_map = largest_connected_component(g, feats, labels)
    if featureless and identity_features:
        feats = np.eye(g.num_nodes)

    if (d / "split.json").exists():
        raw = read_split(d / "split.json")
        back = -np.ones(n, dtype=np.int64)
        back[id_map] = np.arange(id_map.size)

        def remap(a):
            a = back[a]
            return a[a >= 0]

        split = Split(remap(raw.train), remap(raw.val), remap(raw.test))
    else:
        split = stratified_split(labels, seed)
    info = {"featureless": featureless, "id_map": id_map, "raw_num_nodes": n}
    return g, feats, labels, split, info


def generate_sbm(n: int, blocks: int, p_in: float, p_out: float, seed=0, noise: float = 0.1):
    """Stochastic block model with near-equal blocks.

    Features are the one-hot block indicator plus Gaussian noise with
    standard deviation ``noise``; labels are the block ids.
    """
    if not 0 <= p_out < p_in <= 1:
        raise GraphInputError(f"need 0 <= p_out < p_in <= 1, got p_in={p_in}, p_out={p_out}")
    if blocks < 1 or n < blocks:
        raise GraphInputError(f"cannot split {n} nodes into {blocks} non-empty blocks")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(blocks), [len(b) for b in np.array_split(np.arange(n), blocks)])
    iu, ju = np.triu_indices(n, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    g = build_graph(np.stack([iu[keep], ju[keep]], axis=1), n)
    feats = np.eye(blocks)[labels] + noise * rng.standard_normal((n, blocks))
    return g, feats, labels


def write_dataset(directory, g: Graph, features, labels, split: Split = None):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_edges(g, d / "edges.csv")
    with open(d / "labels.csv", "w") as fh:
        for i, c in enumerate(np.asarray(labels)):
            fh.write(f"{i},{int(c)}\n")
    if features is not None:
        with open(d / "features.csv", "w") as fh:
            for row in np.asarray(features):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    if split is not None:
        write_split(split, d / "split.json")


def write_edges(g: Graph, path):
    with open(path, "w") as fh:
        for i, j in g.edges:
            fh.write(f"{int(i)},{int(j)}\n")


def write_perturbations(p: PerturbationSet, path):
    with open(path, "w") as fh:
        for f in p:
            fh.write(f"{f.i},{f.j},{f.op}\n")


def read_perturbations(path) -> PerturbationSet:
    out = PerturbationSet()
    for lineno, cols in _rows(path):
        if len(cols) != 3 or cols[2] not in (ADD, REMOVE):
            raise DataFormatError(path, lineno, "expected 'src,dst,add|remove'")
        i, j = _int(path, lineno, cols[0]), _int(path, lineno, cols[1])
        out.append(Flip(min(i, j), max(i, j), cols[2]))
    return out


def write_qmatrix(Q: np.ndarray, path):
    """Row-major little-endian doubles after an 8-byte little-endian N."""
    n = Q.shape[0]
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", n))
        fh.write(np.ascontiguousarray(Q, dtype="<f8").tobytes())


def read_qmatrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        data = np.frombuffer(fh.read(), dtype="<f8")
    if data.size != n * n:
        raise GraphInputError(f"{path}: expected {n * n} doubles, found {data.size}")
    return data.reshape(n, n).astype(np.float64)


def write_diagnostics(diag, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iter", "attack_loss", "grad_norm", "sampling_error"])
        for t, a, g, s in diag.rows():
            w.writerow([t, repr(float(a)), repr(float(g)), repr(float(s))])


def read_diagnostics(path):
    from .attack import AttackDiagnostics

    diag = AttackDiagnostics()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            diag.attack_loss.append(float(row["attack_loss"]))
            diag.grad_norm.append(float(row["grad_norm"]))
            diag.sampling_error.append(float(row["sampling_error"]))
    return diag


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
