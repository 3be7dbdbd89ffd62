"""Training-free node classification: label propagation through the smoother.

One-hot train labels are smoothed through the configured solver and each
node takes the argmax of its propagated scores.  This gives the attack
harness a victim whose robustness depends only on the aggregation scheme,
with no learned weights anywhere.
"""

from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin

from . import penalties
from .smoothing import Adjacency, SmootherConfig, _smooth_adjacency
from .validation import check_same_shape


@dataclass(frozen=True)
class LabeledSplit:
    """Per-node labels (-1 = unknown) with disjoint train/val/test index sets."""

    labels: np.ndarray
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "labels", labels)
        for name in ("train", "val", "test"):
            idx = np.asarray(getattr(self, name), dtype=np.int64)
            object.__setattr__(self, name, idx)
            if idx.size and (idx.min() < 0 or idx.max() >= labels.shape[0]):
                raise ValueError(f"{name} indices out of range")
        sets = [set(self.train.tolist()), set(self.val.tolist()),
                set(self.test.tolist())]
        if (sets[0] & sets[1]) or (sets[0] & sets[2]) or (sets[1] & sets[2]):
            raise ValueError("train/val/test sets must be disjoint")
        if np.any(self.labels[self.train] < 0):
            raise ValueError("every train node needs a label")
        if np.any(self.labels >= self.classes):
            raise ValueError("label id exceeds the class count")


def onehot_train_labels(split):
    """(n, c) matrix with a 1 at each train node's class, zeros elsewhere.

    Unknown rows stay zero: they exert no anchor pull beyond zero, so the
    prediction depends only on propagated mass.
    """
    F0 = np.zeros((split.labels.shape[0], split.classes))
    F0[split.train, split.labels[split.train]] = 1.0
    return F0


def propagate_labels(g, cfg, split):
    """Smooth one-hot train labels through the solver; rows are class scores."""
    if split.classes < 2:
        raise ValueError("need at least two classes")
    if split.train.size == 0:
        raise ValueError("empty train set")
    scores, _ = _propagate_adjacency(Adjacency.from_graph(g), cfg, split)
    return scores


def _propagate_adjacency(adj, cfg, split):
    cfg = replace(cfg, energy_trace=False)
    F0 = onehot_train_labels(split)
    F, energies, state = _smooth_adjacency(adj, cfg, F0)
    return F, state


def predictions(scores):
    """Argmax class per row; ties resolve to the lowest class id."""
    return np.argmax(scores, axis=1)


def accuracy(scores, split, subset="test"):
    """Fraction of correctly classified nodes in `subset`.

    `subset` is "test"/"val"/"train" or an explicit node index array
    (e.g. attack targets); it must be non-empty and labeled.
    """
    if isinstance(subset, str):
        nodes = getattr(split, subset)
    else:
        nodes = np.asarray(subset, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty evaluation subset")
    truth = split.labels[nodes]
    if np.any(truth < 0):
        raise ValueError("evaluation subset contains unlabeled nodes")
    return float(np.mean(predictions(scores)[nodes] == truth))


def bias_metric(F_clean, F_attacked):
    """sum_i || f_i - f_i* ||_2^2 between clean and attacked aggregations."""
    F_clean = np.asarray(F_clean, dtype=float)
    F_attacked = np.asarray(F_attacked, dtype=float)
    check_same_shape(F_clean, F_attacked, "F_clean", "F_attacked")
    diff = F_clean - F_attacked
    return float(np.einsum("ij,ij->", diff, diff))


def margin_attack_loss(scores, labels, nodes):
    """Negated logit margin, summed over the in-scope nodes.

    The classifier margin is score[true] - max(score[other]); the attack
    maximizes its negation, so a larger value means a weaker classifier.
    """
    sub = scores[nodes]
    truth = labels[nodes]
    true_score = sub[np.arange(sub.shape[0]), truth]
    masked = sub.copy()
    masked[np.arange(sub.shape[0]), truth] = -np.inf
    best_other = masked.max(axis=1)
    return float(np.sum(best_other - true_score))


def cross_entropy_attack_loss(scores, labels, nodes):
    """Softmax cross-entropy of the true classes, summed over scope."""
    sub = scores[nodes]
    truth = labels[nodes]
    shifted = sub - sub.max(axis=1, keepdims=True)
    logZ = np.log(np.exp(shifted).sum(axis=1))
    true_logit = shifted[np.arange(sub.shape[0]), truth]
    return float(np.sum(logZ - true_logit))


_LOSSES = {"margin": margin_attack_loss, "cross_entropy": cross_entropy_attack_loss}


@dataclass
class VictimPipeline:
    """Frozen smoothing + classification victim the attacker probes.

    Evaluates the attack loss on binary graphs and on relaxed weighted
    adjacencies alike; model state never changes during an attack
    (evasion setting).
    """

    config: SmootherConfig
    split: LabeledSplit
    scope: np.ndarray
    loss_kind: str = "margin"

    def __post_init__(self):
        if self.loss_kind not in _LOSSES:
            raise ValueError(f"loss must be one of {sorted(_LOSSES)}")
        self.scope = np.asarray(self.scope, dtype=np.int64)
        if self.scope.size == 0:
            raise ValueError("empty attack scope")

    def scores_adjacency(self, adj):
        scores, _ = _propagate_adjacency(adj, self.config, self.split)
        return scores

    def scores(self, g):
        return self.scores_adjacency(Adjacency.from_graph(g))

    def loss_adjacency(self, adj):
        scores = self.scores_adjacency(adj)
        return _LOSSES[self.loss_kind](scores, self.split.labels, self.scope)

    def loss(self, g):
        return self.loss_adjacency(Adjacency.from_graph(g))

    def accuracy(self, g, subset=None):
        nodes = self.scope if subset is None else subset
        return accuracy(self.scores(g), self.split, nodes)


def save_predictions(path, scores):
    """CSV `node,pred,score_0..score_{c-1}` for a propagated score matrix."""
    import csv

    scores = np.asarray(scores, dtype=float)
    preds = predictions(scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "pred"]
                        + [f"score_{c}" for c in range(scores.shape[1])])
        for node, (pred, row) in enumerate(zip(preds, scores)):
            writer.writerow([node, int(pred)] + [repr(float(v)) for v in row])


def load_predictions(path):
    """Read a predictions CSV back into (pred vector, score matrix)."""
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["node", "pred"]:
            raise ValueError(f"{path}: expected header 'node,pred,score_...'")
        preds, scores = {}, {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                node = int(row[0])
                preds[node] = int(row[1])
                scores[node] = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from exc
    n = len(preds)
    if sorted(preds) != list(range(n)):
        raise ValueError(f"{path}: node ids must cover 0..{n - 1} exactly")
    return (np.array([preds[i] for i in range(n)], dtype=np.int64),
            np.array([scores[i] for i in range(n)], dtype=float))


class GraphLabelPropagator(BaseEstimator, ClassifierMixin):
    """Sklearn-style transductive classifier over a fixed graph.

    `fit(X, y)` takes the full per-node label vector y with -1 marking
    unknown nodes (X is accepted for interface compatibility and may be
    None); labeled nodes form the train set.  `predict(X)` returns the
    propagated classes for the node indices in X, or for all nodes when
    X is None.
    """

    def __init__(self, graph=None, penalty="mcp", gamma=3.0, lam=None,
                 lambda_hat=0.9, iterations=10, solver="qn-irls", eps=1e-12):
        self.graph = graph
        self.penalty = penalty
        self.gamma = gamma
        self.lam = lam
        self.lambda_hat = lambda_hat
        self.iterations = iterations
        self.solver = solver
        self.eps = eps

    def fit(self, X, y):
        if self.graph is None:
            raise ValueError("GraphLabelPropagator needs a graph")
        y = np.asarray(y, dtype=np.int64)
        if y.shape != (self.graph.n,):
            raise ValueError("y must hold one label per node (-1 = unknown)")
        cfg = {"kind": self.penalty}
        if self.penalty == "mcp":
            cfg["gamma"] = self.gamma
        config = SmootherConfig(
            penalty=penalties.from_config(cfg, eps=self.eps),
            lam=self.lam,
            lambda_hat=None if self.lam is not None else self.lambda_hat,
            iterations=self.iterations,
            solver=self.solver,
        )
        self.classes_ = np.arange(int(y.max()) + 1)
        split = LabeledSplit(labels=y, train=np.flatnonzero(y >= 0),
                             val=np.array([], dtype=np.int64),
                             test=np.array([], dtype=np.int64),
                             classes=self.classes_.size)
        self.scores_ = propagate_labels(self.graph, config, split)
        self.labels_ = predictions(self.scores_)
        return self

    def predict(self, X=None):
        if X is None:
            return self.labels_
        return self.labels_[np.asarray(X, dtype=np.int64)]
