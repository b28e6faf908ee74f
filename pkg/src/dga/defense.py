"""Jaccard preprocessing defense: drop edges between dissimilar nodes."""

import numpy as np
import scipy.sparse as sp

from .graph import Graph, GraphInputError, build_graph


def jaccard_similarity(features, pairs: np.ndarray) -> np.ndarray:
    """Jaccard index of the binarized (> 0) feature rows of each pair.

    Two empty rows have similarity 0.
    """
    x = sp.csr_matrix(np.asarray(features) > 0 if not sp.issparse(features) else features > 0,
                      dtype=np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    if pairs.size == 0:
        return np.zeros(0)
    a, b = x[pairs[:, 0]], x[pairs[:, 1]]
    inter = np.asarray(a.multiply(b).sum(axis=1)).ravel()
    size_a = np.asarray(a.sum(axis=1)).ravel()
    size_b = np.asarray(b.sum(axis=1)).ravel()
    union = size_a + size_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def jaccard_filter(g: Graph, features, threshold: float = 0.01) -> Graph:
    """Keep only edges whose endpoint features have Jaccard similarity >= threshold."""
    if features is None:
        raise GraphInputError("the Jaccard defense needs node features; this dataset has none")
    if not 0.0 <= threshold <= 1.0:
        raise GraphInputError(f"threshold must be in [0, 1], got {threshold}")
    if g.num_edges == 0:
        return g
    sim = jaccard_similarity(features, g.edges)
    return build_graph(g.edges[sim >= threshold], g.num_nodes, node_ids=g.node_ids)
