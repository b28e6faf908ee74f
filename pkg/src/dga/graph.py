"""Undirected simple graphs, connected components, GCN normalization and edge flips."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

ADD = "add"
REMOVE = "remove"


class GraphInputError(ValueError):
    """Raised when graph data violates a precondition."""


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph.

    ``edges`` is an ``(M, 2)`` int array of unique pairs with ``i < j``,
    sorted lexicographically. ``node_ids`` maps current indices back to
    the ids of the graph the nodes were extracted from (after an LCC remap).
    """

    num_nodes: int
    edges: np.ndarray
    node_ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        self.edges.setflags(write=False)

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def edge_set(self) -> set:
        return {(int(i), int(j)) for i, j in self.edges}

    def has_edge(self, i: int, j: int) -> bool:
        i, j = min(i, j), max(i, j)
        return (i, j) in self._lookup

    @property
    def _lookup(self) -> set:
        # cached lazily; the dataclass is frozen so bypass __setattr__
        try:
            return self.__dict__["_edge_lookup"]
        except KeyError:
            s = self.edge_set()
            object.__setattr__(self, "_edge_lookup", s)
            return s

    def adjacency(self, dtype=np.float64) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix."""
        a = np.zeros((self.num_nodes, self.num_nodes), dtype=dtype)
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1
            a[self.edges[:, 1], self.edges[:, 0]] = 1
        return a

    def sparse_adjacency(self) -> sp.csr_matrix:
        n = self.num_nodes
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(rows.shape[0])
        return sp.csr_matrix((data, (rows, cols)), shape=(n, n))

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.num_nodes, dtype=np.int64)
        np.add.at(deg, self.edges[:, 0], 1)
        np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.num_nodes == other.num_nodes and np.array_equal(self.edges, other.edges)

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges})"


def _canonical_edges(pairs: np.ndarray) -> np.ndarray:
    if pairs.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi
    canon = np.stack([lo[keep], hi[keep]], axis=1).astype(np.int64)
    if canon.size == 0:
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(canon, axis=0)


def build_graph(edge_list: Iterable, num_nodes: int, node_ids=None) -> Graph:
    """Build a deduplicated, self-loop-free undirected graph.

    >>> build_graph([(0, 1), (1, 0), (1, 1)], 2).edge_set()
    {(0, 1)}
    """
    pairs = np.asarray(list(edge_list) if not isinstance(edge_list, np.ndarray) else edge_list,
                       dtype=np.int64).reshape(-1, 2)
    if num_nodes < 0:
        raise GraphInputError(f"num_nodes must be non-negative, got {num_nodes}")
    if pairs.size and (pairs.min() < 0 or pairs.max() >= num_nodes):
        raise GraphInputError(
            f"edge endpoint out of range [0, {num_nodes}): min={pairs.min()}, max={pairs.max()}")
    ids = None if node_ids is None else np.asarray(node_ids)
    return Graph(int(num_nodes), _canonical_edges(pairs), ids)


def largest_connected_component(g: Graph, features: Optional[np.ndarray] = None,
                                labels: Optional[np.ndarray] = None):
    """Restrict the graph (and node-aligned arrays) to its largest component.

    Among components of equal size the one containing the lowest node index
    wins. Nodes keep their relative order in the re-indexing.

    Returns
    -------
    (Graph, features, labels, id_map) where ``id_map[new] = old``.
    """
    n = g.num_nodes
    if n == 0:
        return g, features, labels, np.zeros(0, dtype=np.int64)
    _, comp = connected_components(g.sparse_adjacency(), directed=False)
    sizes = np.bincount(comp)
    candidates = np.flatnonzero(sizes == sizes.max())
    first_node = [int(np.argmax(comp == c)) for c in candidates]
    best = int(candidates[int(np.argmin(first_node))])
    keep = np.flatnonzero(comp == best)
    remap = -np.ones(n, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    e = g.edges
    inside = (remap[e[:, 0]] >= 0) & (remap[e[:, 1]] >= 0)
    new_edges = remap[e[inside]]
    base_ids = keep if g.node_ids is None else np.asarray(g.node_ids)[keep]
    sub = build_graph(new_edges, keep.size, node_ids=base_ids)
    feats = None if features is None else features[keep]
    labs = None if labels is None else np.asarray(labels)[keep]
    return sub, feats, labs, keep


def count_components(g: Graph) -> int:
    if g.num_nodes == 0:
        return 0
    k, _ = connected_components(g.sparse_adjacency(), directed=False)
    return int(k)


def gcn_normalize(weighted_adjacency) -> np.ndarray:
    """Symmetric GCN propagation matrix D^-1/2 (W + I) D^-1/2.

    Accepts a dense array or a scipy sparse matrix; the result has the same
    kind. Degrees include the unit self-loop so they are always >= 1.
    """
    if sp.issparse(weighted_adjacency):
        w = weighted_adjacency.tocsr().astype(np.float64)
        if w.nnz and w.data.min() < 0:
            raise GraphInputError("negative edge weight in adjacency")
        a = w + sp.identity(w.shape[0], format="csr")
        deg = np.asarray(a.sum(axis=1)).ravel()
        s = sp.diags(1.0 / np.sqrt(deg))
        return (s @ a @ s).tocsr()
    w = np.asarray(weighted_adjacency, dtype=np.float64)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise GraphInputError(f"adjacency must be square, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise GraphInputError("non-finite entry in adjacency")
    if (w < 0).any():
        raise GraphInputError("negative edge weight in adjacency")
    a = w + np.eye(w.shape[0])
    s = 1.0 / np.sqrt(a.sum(axis=1))
    return a * s[:, None] * s[None, :]


@dataclass(frozen=True)
class Split:
    """Disjoint train/val/test node index arrays."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        for name in ("train", "val", "test"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.int64).ravel())
        sets = [set(self.train.tolist()), set(self.val.tolist()), set(self.test.tolist())]
        if sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2]:
            raise GraphInputError("train/val/test splits overlap")
        if self.train.size == 0 or self.test.size == 0:
            raise GraphInputError("train and test splits must be non-empty")

    def unlabeled(self, num_nodes: int) -> np.ndarray:
        return np.setdiff1d(np.arange(num_nodes), self.train)

    def to_json(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("train", "val", "test")}


@dataclass(frozen=True)
class Flip:
    i: int
    j: int
    op: str


class PerturbationSet(list):
    """List of :class:`Flip` with ``i < j``; one entry per undirected pair."""

    def pairs(self) -> np.ndarray:
        if not self:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array([(f.i, f.j) for f in self], dtype=np.int64)

    def inverse(self) -> "PerturbationSet":
        return PerturbationSet(Flip(f.i, f.j, REMOVE if f.op == ADD else ADD) for f in self)

    def counts(self) -> Counter:
        return Counter(f.op for f in self)


def make_flips(pairs, g: Graph) -> PerturbationSet:
    """Turn unordered pairs into flips, labelling each against ``g``."""
    out = PerturbationSet()
    for i, j in pairs:
        i, j = (int(i), int(j)) if i < j else (int(j), int(i))
        out.append(Flip(i, j, REMOVE if g.has_edge(i, j) else ADD))
    return out


def apply_perturbations(g: Graph, p: PerturbationSet) -> Graph:
    """Toggle every flip in ``p``; raises if a flip disagrees with ``g``."""
    edges = g.edge_set()
    seen = set()
    for f in p:
        key = (min(f.i, f.j), max(f.i, f.j))
        if key[0] == key[1] or key[1] >= g.num_nodes or key[0] < 0:
            raise GraphInputError(f"invalid flip pair {key}")
        if key in seen:
            raise GraphInputError(f"duplicate flip for pair {key}")
        seen.add(key)
        if f.op == ADD:
            if key in edges:
                raise GraphInputError(f"cannot add existing edge {key}")
            edges.add(key)
        elif f.op == REMOVE:
            if key not in edges:
                raise GraphInputError(f"cannot remove missing edge {key}")
            edges.remove(key)
        else:
            raise GraphInputError(f"unknown flip op {f.op!r}")
    return build_graph(sorted(edges), g.num_nodes, node_ids=g.node_ids)


def degree_distribution(g: Graph) -> dict:
    """Histogram ``{degree: node count}``."""
    return dict(sorted(Counter(int(d) for d in g.degrees()).items()))
