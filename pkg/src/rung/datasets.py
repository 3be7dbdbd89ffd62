"""Synthetic block-model data and the CSV dataset formats.

The generator is a desk-scale stand-in for citation benchmarks: a
stochastic block model over balanced classes, with class features on
scaled one-hot corners so the inter-cluster feature distance is
controllable relative to the pruning threshold.
"""

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from ._rng import substream
from .classify import LabeledSplit
from .graph import build_graph, load_edges

_ROW_CHUNK = 256  # pair sampling works on row blocks to bound memory


@dataclass(frozen=True)
class SyntheticSpec:
    """Stochastic block model with Gaussian class features."""

    n: int = 500
    classes: int = 2
    intra_p: float = 0.02
    inter_q: float = 0.002
    feature_dim: int = 2
    feature_scale: float = 3.0  # one-hot corner magnitude when centers omitted
    feature_sigma: float = 1.0
    class_centers: tuple | None = None
    train_ratio: float = 0.8
    val_ratio: float = 0.1
    self_loops: bool = False

    def __post_init__(self):
        if not 0 <= self.inter_q <= self.intra_p <= 1:
            raise ValueError("need 0 <= inter_q <= intra_p <= 1")
        if self.classes < 1 or self.n < 1:
            raise ValueError("need at least one node and one class")
        if self.feature_scale <= 0:
            raise ValueError("feature_scale must be positive")
        if self.class_centers is None and self.feature_dim < self.classes:
            raise ValueError(
                "one-hot corner centers need feature_dim >= classes "
                "(or pass class_centers explicitly)")
        if not (0 < self.train_ratio <= 1) or self.val_ratio < 0 \
                or self.train_ratio + self.val_ratio > 1:
            raise ValueError("invalid split ratios")

    def centers(self):
        if self.class_centers is not None:
            c = np.asarray(self.class_centers, dtype=float)
            if c.shape != (self.classes, self.feature_dim):
                raise ValueError("class_centers must be (classes, feature_dim)")
            return c
        c = np.zeros((self.classes, self.feature_dim))
        c[np.arange(self.classes), np.arange(self.classes)] = self.feature_scale
        return c


def _sample_block_edges(labels, intra_p, inter_q, rng):
    n = labels.shape[0]
    src_acc, dst_acc = [], []
    for start in range(0, n, _ROW_CHUNK):
        stop = min(start + _ROW_CHUNK, n)
        for i in range(start, stop):
            js = np.arange(i + 1, n)
            if js.size == 0:
                continue
            p = np.where(labels[js] == labels[i], intra_p, inter_q)
            hits = js[rng.random(js.size) < p]
            if hits.size:
                src_acc.append(np.full(hits.size, i))
                dst_acc.append(hits)
    if not src_acc:
        return np.empty((0, 2), dtype=np.int64)
    return np.column_stack([np.concatenate(src_acc), np.concatenate(dst_acc)])


def sample_split(labels, train_ratio, val_ratio, rng, classes=None):
    """Permute labeled nodes and slice off train/val/test by the ratios."""
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.flatnonzero(labels >= 0)
    order = rng.permutation(labeled)
    n_train = int(round(train_ratio * order.size))
    n_val = int(round(val_ratio * order.size))
    if classes is None:
        classes = int(labels.max()) + 1 if labeled.size else 0
    return LabeledSplit(
        labels=labels,
        train=np.sort(order[:n_train]),
        val=np.sort(order[n_train:n_train + n_val]),
        test=np.sort(order[n_train + n_val:]),
        classes=classes,
    )


def generate_sbm(spec, seed):
    """Sample a block-model dataset: (graph, features, split).

    Classes are assigned round-robin, so sizes differ by at most one.
    Edges within a class appear with probability intra_p, across classes
    with inter_q; features are the class center plus isotropic Gaussian
    noise.  Zero-degree nodes are allowed but flagged with a warning.
    Deterministic given the seed.
    """
    labels = np.arange(spec.n, dtype=np.int64) % spec.classes
    rng = substream(seed, "dataset")
    pairs = _sample_block_edges(labels, spec.intra_p, spec.inter_q, rng)
    g = build_graph(spec.n, pairs, self_loops=spec.self_loops)
    if np.any(g.degrees == 0):
        warnings.warn(
            f"{int((g.degrees == 0).sum())} zero-degree nodes in the sample",
            RuntimeWarning,
        )
    F = spec.centers()[labels] + spec.feature_sigma * rng.standard_normal(
        (spec.n, spec.feature_dim))
    split = sample_split(labels, spec.train_ratio, spec.val_ratio,
                         substream(seed, "split"), classes=spec.classes)
    return g, F, split


# ------------------------------------------------------------------ file I/O

def _fmt(x):
    return repr(float(x))


def save_features(path, F):
    F = np.asarray(F, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node"] + [f"f{i}" for i in range(F.shape[1])])
        for node, row in enumerate(F):
            writer.writerow([node] + [_fmt(v) for v in row])


def load_features(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "node":
            raise ValueError(f"{path}: expected header 'node,f0,...', got {header}")
        d = len(header) - 1
        rows = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise ValueError(f"{path}:{lineno}: expected {d + 1} columns")
            try:
                rows[int(row[0])] = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from exc
    n = len(rows)
    if sorted(rows) != list(range(n)):
        raise ValueError(f"{path}: node ids must cover 0..{n - 1} exactly")
    return np.array([rows[i] for i in range(n)], dtype=float)


def save_labels(path, labels):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node", "label"])
        for node, lab in enumerate(np.asarray(labels, dtype=np.int64)):
            writer.writerow([node, int(lab)])


def load_labels(path, n):
    labels = np.full(n, -1, dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip() for c in header[:2]] != ["node", "label"]:
            raise ValueError(f"{path}: expected header 'node,label', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                node, lab = int(row[0]), int(row[1])
            except (ValueError, IndexError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed row {row}") from exc
            if not 0 <= node < n:
                raise ValueError(f"{path}:{lineno}: node {node} out of range")
            labels[node] = lab
    return labels


def save_dataset(edge_path, feature_path, label_path, g, F, labels):
    from .graph import save_edges

    save_edges(edge_path, g)
    save_features(feature_path, F)
    save_labels(label_path, labels)


def load_dataset(edge_path, feature_path, label_path=None, self_loops=False,
                 train_ratio=None, val_ratio=0.0, seed=0):
    """Load a dataset from the CSV formats; node count comes from features.

    Without a label file every node is unknown and the train set is empty
    (enough for smoothing-only runs).  Labeled nodes all land in the train
    set unless split ratios are given, in which case the split is sampled
    from the seed's split substream.
    """
    F = load_features(feature_path)
    n = F.shape[0]
    pairs, _ = load_edges(edge_path, n_nodes=n)
    g = build_graph(n, pairs, self_loops=self_loops)
    if label_path is None:
        labels = np.full(n, -1, dtype=np.int64)
    else:
        labels = load_labels(label_path, n)
    classes = int(labels.max()) + 1 if np.any(labels >= 0) else 0
    if train_ratio is not None:
        split = sample_split(labels, train_ratio, val_ratio,
                             substream(seed, "split"), classes=classes)
    else:
        empty = np.array([], dtype=np.int64)
        split = LabeledSplit(labels=labels, train=np.flatnonzero(labels >= 0),
                             val=empty, test=empty, classes=max(classes, 1))
    return g, F, split
