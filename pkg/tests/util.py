"""Shared test helpers and independent dense oracles.

The oracles here recompute everything from raw edge lists (degrees
included) so they share no code path with the library internals they
check.
"""

import numpy as np

from rung import build_graph


def random_graph(rng, n, p=0.15, self_loops=False):
    """Erdos-Renyi graph; may be disconnected or contain isolated nodes."""
    iu = np.triu_indices(n, k=1)
    mask = rng.random(iu[0].size) < p
    pairs = list(zip(iu[0][mask].tolist(), iu[1][mask].tolist()))
    return build_graph(n, pairs, self_loops=self_loops)


def random_edges_exact(rng, n, m):
    """m distinct non-loop pairs chosen uniformly (n assumed large enough)."""
    pairs = set()
    while len(pairs) < m:
        need = m - len(pairs)
        i = rng.integers(0, n, size=2 * need + 8)
        j = rng.integers(0, n, size=2 * need + 8)
        for a, b in zip(i.tolist(), j.tolist()):
            if a != b:
                pairs.add((min(a, b), max(a, b)))
                if len(pairs) == m:
                    break
    return sorted(pairs)


def oracle_degrees(n, pairs, self_loops):
    """Degrees computed by plain counting; a self-loop counts once."""
    deg = [0] * n
    seen = set()
    for i, j in pairs:
        a, b = min(i, j), max(i, j)
        if a == b or (a, b) in seen:
            continue
        seen.add((a, b))
        deg[a] += 1
        deg[b] += 1
    if self_loops:
        for v in range(n):
            deg[v] += 1
    return np.array(deg)


def oracle_dense_adjacency(n, pairs, self_loops):
    """Dense symmetrically normalized adjacency built entry by entry."""
    deg = oracle_degrees(n, pairs, self_loops)
    A = np.zeros((n, n))
    for i, j in pairs:
        a, b = min(i, j), max(i, j)
        if a != b:
            A[a, b] = A[b, a] = 1.0
    if self_loops:
        for v in range(n):
            A[v, v] = 1.0
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if A[i, j]:
                out[i, j] = 1.0 / np.sqrt(deg[i] * deg[j])
    return out


def oracle_objective(g, penalty, lam, F, F0):
    """Energy recomputed edge by edge from the stored pairs."""
    deg = g.degrees.astype(float)
    total = 0.0
    for i, j in g.edge_pairs():
        if i == j:
            continue
        y = np.linalg.norm(F[i] / np.sqrt(deg[i]) - F[j] / np.sqrt(deg[j]))
        total += float(penalty.rho(y))
    total += lam * float(np.sum((F - F0) ** 2))
    return total
