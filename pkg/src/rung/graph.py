"""Immutable sparse undirected graph with degree bookkeeping.

Edges are stored once as canonical pairs (i, j) with i <= j; symmetry is
structural rather than checked at runtime.  A self-loop (i, i) counts once
toward the degree of i.  The symmetrically normalized adjacency entry for
an edge (i, j) is 1 / sqrt(d_i * d_j).
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from sklearn.exceptions import ConvergenceWarning

from .validation import check_edge_weights, check_node

import warnings


@dataclass(frozen=True)
class SparseGraph:
    """Undirected graph over nodes 0..n-1 with canonical sorted edge list."""

    n: int
    src: np.ndarray  # shape (m,), src <= dst, lexicographically sorted
    dst: np.ndarray
    degrees: np.ndarray  # incident-edge counts, self-loop counts once
    self_loops: bool

    _edge_lookup: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        for a in (self.src, self.dst, self.degrees):
            a.setflags(write=False)
        lookup = {
            (int(i), int(j)): e
            for e, (i, j) in enumerate(zip(self.src, self.dst))
        }
        object.__setattr__(self, "_edge_lookup", lookup)

    @property
    def m(self):
        """Number of stored edges (self-loops included when present)."""
        return int(self.src.shape[0])

    @property
    def inv_sqrt_degrees(self):
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.sqrt(self.degrees.astype(np.float64))
        inv[self.degrees == 0] = 0.0
        return inv

    def edge_index(self, i, j):
        """Index of edge (i, j) in the stored order, or None if absent."""
        i, j = int(i), int(j)
        if i > j:
            i, j = j, i
        return self._edge_lookup.get((i, j))

    def has_edge(self, i, j):
        return self.edge_index(i, j) is not None

    def edge_pairs(self):
        """Stored edges as a list of (i, j) tuples with i <= j."""
        return list(zip(self.src.tolist(), self.dst.tolist()))


def build_graph(n, edge_list, self_loops=False):
    """Build a canonical SparseGraph from a possibly messy edge list.

    Duplicate and reversed pairs collapse to one stored edge.  If
    `self_loops` is true every node receives a loop edge (i, i); if false
    any loops found in the input are stripped.

    Raises
    ------
    ValueError
        If n == 0 or any endpoint falls outside [0, n).
    """
    n = int(n)
    if n <= 0:
        raise ValueError("graph needs at least one node")
    pairs = np.asarray(list(edge_list), dtype=np.int64).reshape(-1, 2)
    if pairs.size and (pairs.min() < 0 or pairs.max() >= n):
        bad = pairs[(pairs < 0).any(axis=1) | (pairs >= n).any(axis=1)][0]
        raise ValueError(f"edge ({bad[0]}, {bad[1]}) out of range [0, {n})")
    lo = np.minimum(pairs[:, 0], pairs[:, 1])
    hi = np.maximum(pairs[:, 0], pairs[:, 1])
    keep = lo != hi  # loop policy is decided by the flag, not the input
    lo, hi = lo[keep], hi[keep]
    if self_loops:
        loops = np.arange(n, dtype=np.int64)
        lo = np.concatenate([lo, loops])
        hi = np.concatenate([hi, loops])
    if lo.size:
        order = np.lexsort((hi, lo))
        lo, hi = lo[order], hi[order]
        distinct = np.ones(lo.size, dtype=bool)
        distinct[1:] = (lo[1:] != lo[:-1]) | (hi[1:] != hi[:-1])
        lo, hi = lo[distinct], hi[distinct]
    degrees = np.bincount(lo, minlength=n) + np.bincount(hi, minlength=n)
    degrees -= np.bincount(lo[lo == hi], minlength=n)  # loops count once
    return SparseGraph(n=n, src=lo, dst=hi, degrees=degrees,
                       self_loops=bool(self_loops))


def normalized_weight(g, i, j):
    """Symmetrically normalized adjacency entry 1/sqrt(d_i d_j), or 0.

    Returns 0 for absent edges and for queries touching isolated nodes.
    """
    i = check_node(i, g.n, "i")
    j = check_node(j, g.n, "j")
    if not g.has_edge(i, j):
        return 0.0
    return float(g.inv_sqrt_degrees[i] * g.inv_sqrt_degrees[j])


def _reweighted_operator(g, diag, w, shift):
    """CSR form of diag(diag) - W (.) A_norm + shift * I."""
    w = check_edge_weights(g, w)
    diag = np.asarray(diag, dtype=np.float64)
    if diag.shape != (g.n,):
        raise ValueError(f"diag must have length {g.n}, got {diag.shape}")
    inv = g.inv_sqrt_degrees
    off = g.src != g.dst
    s, d = g.src[off], g.dst[off]
    vals = -w[off] * inv[s] * inv[d]
    rows = np.concatenate([s, d, np.arange(g.n)])
    cols = np.concatenate([d, s, np.arange(g.n)])
    data = np.concatenate([vals, vals, np.full(g.n, shift, dtype=np.float64)])
    data[2 * s.size:] += diag
    return sparse.csr_matrix((data, (rows, cols)), shape=(g.n, g.n))


def power_norm(matvec, n, seed=0, tol=1e-8, max_iter=10000, return_error=False):
    """Largest absolute eigenvalue of a symmetric operator by power iteration.

    The estimate ||M v_k|| increases monotonically (it is the square root
    of a Rayleigh quotient of M^2), so the remaining error is projected by
    geometric extrapolation of successive increments; iteration stops once
    the projected error drops below relative `tol`.  On non-convergence
    within `max_iter` sweeps the best estimate is returned alongside a
    ConvergenceWarning.  Deterministic for a given seed.

    With `return_error` the achieved relative-error estimate comes back as
    a second value (`tol` on normal exit, the last projection otherwise),
    letting callers widen safety margins around unconverged estimates.
    """
    def done(value, err):
        return (value, err) if return_error else value

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    est = None
    prev_diff = None
    projected = None
    stalled = 0
    for _ in range(max_iter):
        u = matvec(v)
        nrm = float(np.linalg.norm(u))
        if nrm == 0.0:
            return done(0.0, 0.0)  # v in the kernel: the operator is (a.s.) zero
        if est is not None:
            diff = abs(nrm - est)
            # successive increments at float resolution carry no signal;
            # two in a row means the estimate cannot improve further
            stalled = stalled + 1 if diff <= 4 * np.finfo(float).eps * nrm else 0
            if diff <= np.finfo(float).eps * nrm or stalled >= 2:
                return done(nrm, tol)
            if prev_diff is not None and diff < prev_diff:
                ratio = diff / prev_diff
                projected = diff * ratio / (1.0 - ratio) / nrm
                if projected <= tol:
                    return done(nrm, tol)
            prev_diff = diff
        est = nrm
        v = u / nrm
    warnings.warn(
        f"power iteration did not reach tol={tol} in {max_iter} iterations; "
        f"returning best estimate {est}",
        ConvergenceWarning,
    )
    return done(est, projected if projected is not None else 1.0)


def spectral_norm(g, diag, w, shift, seed=0, tol=1e-8, max_iter=10000):
    """Spectral norm of diag(diag) - W (.) A_norm + shift * I.

    The matrix is symmetric, so its 2-norm is the largest absolute
    eigenvalue, estimated by `power_norm`.
    """
    if shift < 0:
        raise ValueError("shift must be non-negative")
    M = _reweighted_operator(g, diag, w, shift)
    return power_norm(lambda v: M @ v, g.n, seed=seed, tol=tol, max_iter=max_iter)


def load_edges(path, n_nodes=None):
    """Read an edge-list CSV (header `src,dst`) into (pair list, n_min).

    Duplicate and reversed rows are tolerated; deduplication happens in
    `build_graph`.  Returns the raw pairs plus the smallest node count
    able to hold them.  When `n_nodes` is given, a row referencing a node
    at or beyond it fails with the offending line number.
    """
    pairs = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["src", "dst"]:
            raise ValueError(f"{path}: expected header 'src,dst', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise ValueError(f"{path}:{lineno}: expected two columns, got {row}")
            try:
                i, j = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: non-integer endpoint in {row}") from exc
            if i < 0 or j < 0:
                raise ValueError(f"{path}:{lineno}: negative node id in {row}")
            if n_nodes is not None and (i >= n_nodes or j >= n_nodes):
                raise ValueError(
                    f"{path}:{lineno}: edge ({i}, {j}) references a node "
                    f">= {n_nodes}")
            pairs.append((i, j))
    n_min = 1 + max((max(p) for p in pairs), default=-1)
    return pairs, n_min


def save_edges(path, g):
    """Write the non-loop edges of g as a `src,dst` CSV."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst"])
        for i, j in zip(g.src, g.dst):
            if i != j:
                writer.writerow([int(i), int(j)])
