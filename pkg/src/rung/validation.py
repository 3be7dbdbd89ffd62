"""Input validation helpers shared across the estimators and solvers."""

import numpy as np


def as_features(X, n_nodes=None, name="X"):
    """Coerce X to a C-contiguous float64 (n, d) array and check it.

    Raises ValueError on non-finite entries, wrong dimensionality, or a
    row count that disagrees with the companion graph.
    """
    F = np.asarray(X, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if F.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {F.shape}")
    if not np.all(np.isfinite(F)):
        raise ValueError(f"{name} contains non-finite entries")
    if n_nodes is not None and F.shape[0] != n_nodes:
        raise ValueError(
            f"{name} has {F.shape[0]} rows but the graph has {n_nodes} nodes"
        )
    return np.ascontiguousarray(F)


def check_same_shape(A, B, name_a="F", name_b="F0"):
    if A.shape != B.shape:
        raise ValueError(
            f"{name_a} and {name_b} shapes disagree: {A.shape} vs {B.shape}"
        )


def check_node(i, n, name="node"):
    i = int(i)
    if not 0 <= i < n:
        raise ValueError(f"{name} {i} out of range [0, {n})")
    return i


def check_edge_weights(graph, values):
    """Validate an edge-weight vector against its graph's edge layout."""
    w = np.asarray(values, dtype=np.float64)
    if w.shape != (graph.m,):
        raise ValueError(f"expected {graph.m} edge weights, got shape {w.shape}")
    if np.any(w < 0):
        raise ValueError("edge weights must be non-negative")
    loops = graph.src == graph.dst
    if np.any(w[loops] != 0.0):
        raise ValueError("self-loop edges must carry weight 0")
    return w
