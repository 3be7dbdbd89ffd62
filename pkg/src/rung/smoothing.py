"""Robust graph-signal smoothing by iteratively reweighted least squares.

The estimation objective for features F anchored at F0 is

    H(F) = sum_edges rho(y_ij) + lam * sum_i ||f_i - f0_i||^2,
    y_ij = || f_i / sqrt(d_i) - f_j / sqrt(d_j) ||_2,

with rho drawn from the penalty family.  H is non-smooth (and non-convex
for the capped penalty), so each iteration minimizes a quadratic upper
bound instead: freeze the edge weights W_ij = d rho / d(y^2) at the
current iterate, then either take one explicit gradient step on the bound
(first-order solver, "irls") or solve the diagonally preconditioned
system in closed form (quasi-Newton solver, "qn-irls"):

    F+ = (diag(q) + lam I)^-1 ( (W (.) A_norm) F + lam F0 ),
    q_m = sum_j W_mj A_mj / d_m.

The quasi-Newton step needs no step size and never increases H; the
first-order step is guaranteed to descend when the step size eta does not
exceed 1 / || diag(q) - W (.) A_norm + lam I ||_2, which is the automatic
choice when eta is not given.

Both solvers run on `Adjacency`, a weighted edge-list view of the graph;
binary graphs use unit weights, and the attack module substitutes relaxed
fractional weights without touching the solver.
"""

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from sklearn.base import BaseEstimator, TransformerMixin

from . import penalties
from .graph import SparseGraph, power_norm
from .validation import as_features, check_same_shape

SOLVERS = ("qn-irls", "irls")

#: relative slack for the guaranteed-descent assertion of the qn solver
QN_DESCENT_SLACK = 1e-10
#: relative slack before a guaranteed (auto-stepped, eta_scale <= 1)
#: first-order iteration is reported as divergent, indicating a bug
IRLS_DESCENT_SLACK = 1e-9
#: relative margin keeping the automatic step strictly inside the descent
#: bound: the power-iteration norm estimate approaches the true norm from
#: below, and for the quadratic penalty the bound is exactly critical, so
#: 1/estimate alone can overshoot by the estimation error; the margin is
#: widened when the estimate reports a larger achieved error
ETA_SAFETY = 1e-7


def _auto_eta(adj, q, W, lam, eta_scale):
    norm, err = adj.operator_norm(q, W, lam, return_error=True)
    margin = min(0.5, max(ETA_SAFETY, 10.0 * err))
    return eta_scale * (1.0 - margin) / norm


class DivergenceError(RuntimeError):
    """A solver step increased the energy it is guaranteed to decrease."""


@dataclass(frozen=True)
class SmootherConfig:
    """Solver settings for `smooth`.

    Exactly one of `lam` / `lambda_hat` must be given; the other is
    derived through lambda_hat = 1 / (1 + lam).  `eta` applies to the
    first-order solver only; when absent the per-iteration spectral-norm
    bound is used (recomputed every iteration unless `freeze_eta`).
    """

    penalty: penalties.Penalty
    lam: float | None = None
    lambda_hat: float | None = None
    iterations: int = 10
    solver: str = "qn-irls"
    eta: float | None = None
    eta_scale: float = 1.0
    freeze_eta: bool = False
    energy_trace: bool = False

    def __post_init__(self):
        if (self.lam is None) == (self.lambda_hat is None):
            raise ValueError("give exactly one of lam / lambda_hat")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.lambda_hat is not None and not 0 < self.lambda_hat < 1:
            raise ValueError("lambda_hat must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if self.solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        if self.eta is not None:
            if self.solver != "irls":
                raise ValueError("eta only applies to the irls solver")
            if not self.eta > 0:
                raise ValueError("eta must be positive")
        if not self.eta_scale > 0:
            raise ValueError("eta_scale must be positive")

    @property
    def guaranteed_step(self):
        """True when the first-order step provably cannot increase energy."""
        return self.eta is None and self.eta_scale <= 1.0

    @property
    def lam_value(self):
        if self.lam is not None:
            return float(self.lam)
        return 1.0 / self.lambda_hat - 1.0


@dataclass(frozen=True)
class SmootherState:
    """Per-iterate bookkeeping: reweights, their row sums, and the energy.

    `weights` and `q` are consistent with the features the state was
    returned with, and `energy` equals the objective at those features.
    """

    weights: np.ndarray
    q: np.ndarray
    energy: float
    iteration: int


class Adjacency:
    """Weighted undirected adjacency in edge-list form, the solver's working view.

    Wraps endpoints (src <= dst), per-edge weights a_e >= 0, and weighted
    degrees (a self-loop counts its weight once).  Instances own a reusable
    CSR skeleton for the reweighted aggregation, so they are cheap to apply
    repeatedly but are not safe to share across threads.
    """

    def __init__(self, n, src, dst, a, degrees=None):
        self.n = int(n)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.a = np.asarray(a, dtype=np.float64)
        if degrees is None:
            degrees = (
                np.bincount(self.src, weights=self.a, minlength=self.n)
                + np.bincount(self.dst, weights=self.a, minlength=self.n)
            )
            loops = self.src == self.dst
            degrees -= np.bincount(self.src[loops], weights=self.a[loops],
                                   minlength=self.n)
        self.degrees = np.asarray(degrees, dtype=np.float64)
        with np.errstate(divide="ignore"):
            inv = 1.0 / np.sqrt(self.degrees)
        inv[self.degrees <= 0] = 0.0
        self.inv_sqrt_degrees = inv

        self._off = np.flatnonzero(self.src != self.dst)
        s, d = self.src[self._off], self.dst[self._off]
        rows = np.concatenate([s, d])
        cols = np.concatenate([d, s])
        slot_edge = np.concatenate([self._off, self._off])
        coefs = self.a[slot_edge] * inv[rows] * inv[cols]
        mat = sparse.csr_matrix(
            (np.arange(rows.size, dtype=np.float64), (rows, cols)),
            shape=(self.n, self.n),
        )
        if mat.nnz != rows.size:
            # duplicates would have been summed, scrambling the slot map
            raise ValueError("adjacency edge list contains duplicate pairs")
        perm = mat.data.astype(np.int64)
        self._csr = mat
        self._slot_edge = slot_edge[perm]
        self._slot_coef = coefs[perm]

    @classmethod
    def from_graph(cls, g: SparseGraph):
        return cls(g.n, g.src, g.dst, np.ones(g.m), g.degrees.astype(np.float64))

    @property
    def m(self):
        return int(self.src.shape[0])

    def edge_differences(self, F):
        """Degree-normalized feature difference norm per stored edge."""
        Fn = F * self.inv_sqrt_degrees[:, None]
        diff = Fn[self.src] - Fn[self.dst]
        return np.sqrt(np.einsum("ij,ij->i", diff, diff))

    def penalty_weights(self, penalty, y):
        """Edge reweights d rho / d(y^2) with self-loop entries forced to 0."""
        W = penalty.weight(y)
        W[self.src == self.dst] = 0.0
        return W

    def q_vector(self, W):
        """q_m = sum_j W_mj a_mj / d_m (zero for isolated nodes)."""
        eff = W[self._off] * self.a[self._off]
        s, d = self.src[self._off], self.dst[self._off]
        total = (np.bincount(s, weights=eff, minlength=self.n)
                 + np.bincount(d, weights=eff, minlength=self.n))
        with np.errstate(divide="ignore", invalid="ignore"):
            q = total / self.degrees
        q[self.degrees <= 0] = 0.0
        return q

    def aggregate(self, W, F):
        """(W (.) A_norm) F without materializing the reweighted matrix."""
        self._csr.data = W[self._slot_edge] * self._slot_coef
        return self._csr @ F

    def objective(self, penalty, lam, F, F0):
        """Energy H(F); edge penalties are scaled by the edge weights a_e."""
        y = self.edge_differences(F)
        return self._objective_from(penalty, lam, y, F, F0)

    def _objective_from(self, penalty, lam, y, F, F0):
        off = self._off
        pen = float(np.dot(self.a[off], penalty.rho(y[off])))
        resid = F - F0
        return pen + lam * float(np.einsum("ij,ij->", resid, resid))

    def operator_norm(self, diag, W, shift, seed=0, tol=1e-8, max_iter=10000,
                      return_error=False):
        """|| diag(diag) - W (.) A_norm + shift I ||_2 by power iteration."""
        scale = diag + shift

        def matvec(v):
            return scale * v - self.aggregate(W, v[:, None])[:, 0]

        return power_norm(matvec, self.n, seed=seed, tol=tol,
                          max_iter=max_iter, return_error=return_error)


def edge_difference(g, F, i, j):
    """y_ij = || f_i / sqrt(d_i) - f_j / sqrt(d_j) ||_2 for an edge of g."""
    F = as_features(F, g.n)
    if not g.has_edge(i, j):
        raise ValueError(f"({i}, {j}) is not an edge")
    inv = g.inv_sqrt_degrees
    return float(np.linalg.norm(F[i] * inv[i] - F[j] * inv[j]))


def objective(g, penalty, lam, F, F0):
    """Energy H(F) = sum_edges rho(y_ij) + lam * sum_i ||f_i - f0_i||^2.

    Self-loop edges are excluded from the penalty sum; the fidelity term
    uses the squared Euclidean norm.
    """
    F = as_features(F, g.n)
    F0 = as_features(F0, g.n)
    check_same_shape(F, F0)
    return Adjacency.from_graph(g).objective(penalty, lam, F, F0)


def compute_weights(g, penalty, F):
    """Edge reweights W_ij = weight(y_ij), exactly 0 on self-loops."""
    F = as_features(F, g.n)
    adj = Adjacency.from_graph(g)
    return adj.penalty_weights(penalty, adj.edge_differences(F))


def _quadratic_part(adj, penalty, lam, W, F, F0):
    y = adj.edge_differences(F)
    off = adj._off
    quad = float(np.dot(adj.a[off] * W[off], y[off] ** 2))
    resid = F - F0
    return quad + lam * float(np.einsum("ij,ij->", resid, resid))


def upper_bound(g, penalty, lam, F, F0, anchor):
    """Quadratic majorizer of the objective, tight at the anchor.

    Freezes W at the anchor and returns  sum W_ij y_ij(F)^2 + fidelity + C
    with C chosen so the bound equals the objective at F = anchor.  For
    every F the returned value dominates objective(F).
    """
    F = as_features(F, g.n)
    F0 = as_features(F0, g.n)
    anchor = as_features(anchor, g.n)
    check_same_shape(F, F0)
    adj = Adjacency.from_graph(g)
    W = adj.penalty_weights(penalty, adj.edge_differences(anchor))
    const = adj.objective(penalty, lam, anchor, F0) - _quadratic_part(
        adj, penalty, lam, W, anchor, F0)
    return _quadratic_part(adj, penalty, lam, W, F, F0) + const


def bound_gradient(g, penalty, lam, F, F0, anchor):
    """Closed-form gradient of the majorizer anchored at `anchor`:

    grad = 2 ( (diag(q) - W (.) A_norm + lam I) F - lam F0 ).
    """
    F = as_features(F, g.n)
    F0 = as_features(F0, g.n)
    anchor = as_features(anchor, g.n)
    check_same_shape(F, F0)
    adj = Adjacency.from_graph(g)
    W = adj.penalty_weights(penalty, adj.edge_differences(anchor))
    q = adj.q_vector(W)
    return 2.0 * ((q + lam)[:, None] * F - adj.aggregate(W, F) - lam * F0)


def bound_hessian_dense(g, penalty, lam, anchor, max_nodes=64):
    """Dense Hessian 2 (diag(q) - W (.) A_norm + lam I) of the majorizer.

    Test-scale only (n <= 64); the solvers never materialize this matrix.
    """
    if g.n > max_nodes:
        raise ValueError(f"dense Hessian limited to {max_nodes} nodes, got {g.n}")
    anchor = as_features(anchor, g.n)
    adj = Adjacency.from_graph(g)
    W = adj.penalty_weights(penalty, adj.edge_differences(anchor))
    q = adj.q_vector(W)
    H = -(adj.aggregate(W, np.eye(g.n)))
    H[np.diag_indices(g.n)] += q + lam
    return 2.0 * H


def _prepare(adj, penalty, F):
    y = adj.edge_differences(F)
    W = adj.penalty_weights(penalty, y)
    return y, W, adj.q_vector(W)


def _qn_update(adj, lam, W, q, F, F0):
    denom = q + lam
    agg = adj.aggregate(W, F) + lam * F0
    degenerate = denom <= 0.0
    if np.any(degenerate):
        warnings.warn(
            f"{int(degenerate.sum())} rows have zero diagonal (lam = 0 and no "
            "active incident edges); leaving them unchanged",
            RuntimeWarning,
        )
        denom = np.where(degenerate, 1.0, denom)
        out = agg / denom[:, None]
        out[degenerate] = F[degenerate]
        return out
    return agg / denom[:, None]


def _irls_update(adj, lam, W, q, F, F0, eta):
    grad = 2.0 * ((q + lam)[:, None] * F - adj.aggregate(W, F) - lam * F0)
    return F - eta * grad


def _check_descent(solver, auto_eta, before, after):
    # the absolute floor absorbs rounding dust at exact fixed points, where
    # the float iterate moves by an ulp and the energy ticks up from 0
    floor = 1e-14 * max(1.0, abs(before))
    if solver == "qn-irls":
        if after > before + QN_DESCENT_SLACK * abs(before) + floor:
            raise DivergenceError(
                f"guaranteed-descent step increased energy {before} -> {after}")
    elif auto_eta:
        if after > before + IRLS_DESCENT_SLACK * abs(before) + floor:
            raise DivergenceError(
                f"auto-stepped iteration increased energy {before} -> {after}")


def _smooth_adjacency(adj, cfg, F0):
    """Run cfg.iterations solver steps from F0 on a prepared adjacency.

    Returns (F_final, energies, final_state) where energies has one entry
    per iterate including iteration 0.
    """
    penalty, lam = cfg.penalty, cfg.lam_value
    F = F0.copy()
    y, W, q = _prepare(adj, penalty, F)
    energy = adj._objective_from(penalty, lam, y, F, F0)
    energies = [energy]
    eta = cfg.eta
    for k in range(cfg.iterations):
        if cfg.solver == "qn-irls":
            F_next = _qn_update(adj, lam, W, q, F, F0)
        else:
            if cfg.eta is None and (not cfg.freeze_eta or k == 0):
                eta = _auto_eta(adj, q, W, lam, cfg.eta_scale)
            F_next = _irls_update(adj, lam, W, q, F, F0, eta)
        y, W, q = _prepare(adj, penalty, F_next)
        energy_next = adj._objective_from(penalty, lam, y, F_next, F0)
        _check_descent(cfg.solver, cfg.guaranteed_step, energy, energy_next)
        F, energy = F_next, energy_next
        energies.append(energy)
    state = SmootherState(weights=W, q=q, energy=energy, iteration=cfg.iterations)
    return F, np.asarray(energies), state


def _single_step(g, cfg, F, F0, state):
    F = as_features(F, g.n)
    F0 = as_features(F0, g.n)
    check_same_shape(F, F0)
    adj = Adjacency.from_graph(g)
    iteration = 0 if state is None else state.iteration
    F_new, new_state = _step_once(adj, cfg, F, F0)
    return F_new, replace(new_state, iteration=iteration + 1)


def _step_once(adj, cfg, F, F0):
    penalty, lam = cfg.penalty, cfg.lam_value
    y, W, q = _prepare(adj, penalty, F)
    energy = adj._objective_from(penalty, lam, y, F, F0)
    if cfg.solver == "qn-irls":
        F_next = _qn_update(adj, lam, W, q, F, F0)
    else:
        eta = cfg.eta
        if eta is None:
            eta = _auto_eta(adj, q, W, lam, cfg.eta_scale)
        F_next = _irls_update(adj, lam, W, q, F, F0, eta)
    y2, W2, q2 = _prepare(adj, penalty, F_next)
    energy_next = adj._objective_from(penalty, lam, y2, F_next, F0)
    _check_descent(cfg.solver, cfg.guaranteed_step, energy, energy_next)
    state = SmootherState(weights=W2, q=q2, energy=energy_next, iteration=1)
    return F_next, state


def irls_step(g, cfg, F, F0, state=None):
    """One first-order step on the majorizer anchored at F.

    Without an explicit eta the step size is the spectral-norm bound
    1 / || diag(q) - W (.) A_norm + lam I ||_2, under which the energy
    cannot increase; an increase beyond slack then raises DivergenceError.
    Returns (new features, state at the new features).
    """
    if cfg.solver != "irls":
        cfg = replace(cfg, solver="irls")
    return _single_step(g, cfg, F, F0, state)


def qn_irls_step(g, cfg, F, F0, state=None):
    """One diagonally preconditioned closed-form step; never increases energy.

    Rows whose diagonal q_i + lam vanishes (lam = 0 and every incident
    weight pruned) pass through unchanged with a RuntimeWarning.
    """
    if cfg.solver != "qn-irls":
        cfg = replace(cfg, solver="qn-irls")
    return _single_step(g, cfg, F, F0, state)


def smooth(g, cfg, F0):
    """Run cfg.iterations solver steps from F0.

    Returns (final features, energy trace).  The trace has one entry per
    iterate including iteration 0 when cfg.energy_trace is set, else None.
    """
    F0 = as_features(F0, g.n)
    adj = Adjacency.from_graph(g)
    F, energies, _ = _smooth_adjacency(adj, cfg, F0)
    return F, (energies if cfg.energy_trace else None)


class GraphSmoother(BaseEstimator, TransformerMixin):
    """Sklearn-style transformer applying robust graph smoothing to features.

    The graph is a constructor parameter (like a precomputed kernel), so
    hyperparameter search over penalty settings on a fixed graph composes
    with the usual tooling.  `transform` maps initial features to their
    smoothed estimate; `energy_trace_` records the objective per iterate
    of the latest transform.
    """

    def __init__(self, graph=None, penalty="mcp", gamma=3.0, lam=None,
                 lambda_hat=0.9, iterations=10, solver="qn-irls", eta=None,
                 eta_scale=1.0, freeze_eta=False, eps=1e-12):
        self.graph = graph
        self.penalty = penalty
        self.gamma = gamma
        self.lam = lam
        self.lambda_hat = lambda_hat
        self.iterations = iterations
        self.solver = solver
        self.eta = eta
        self.eta_scale = eta_scale
        self.freeze_eta = freeze_eta
        self.eps = eps

    def _config(self):
        if self.graph is None:
            raise ValueError("GraphSmoother needs a graph")
        cfg = {"kind": self.penalty}
        if self.penalty == "mcp":
            cfg["gamma"] = self.gamma
        return SmootherConfig(
            penalty=penalties.from_config(cfg, eps=self.eps),
            lam=self.lam,
            lambda_hat=None if self.lam is not None else self.lambda_hat,
            iterations=self.iterations,
            solver=self.solver,
            eta=self.eta,
            eta_scale=self.eta_scale,
            freeze_eta=self.freeze_eta,
            energy_trace=True,
        )

    def fit(self, X, y=None):
        self._config()  # validates graph and penalty settings
        F0 = as_features(X, self.graph.n)
        self.n_features_in_ = F0.shape[1]
        return self

    def transform(self, X):
        cfg = self._config()
        F0 = as_features(X, self.graph.n)
        F, trace = smooth(self.graph, cfg, F0)
        self.energy_trace_ = trace
        return F
