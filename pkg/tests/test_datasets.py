import numpy as np
import pytest
from numpy.testing import assert_allclose

from rung.datasets import (
    SyntheticSpec,
    generate_sbm,
    load_dataset,
    load_features,
    sample_split,
    save_dataset,
    save_features,
)


def test_degenerate_probabilities_give_two_cliques():
    spec = SyntheticSpec(n=10, classes=2, intra_p=1.0, inter_q=0.0,
                         feature_dim=2)
    g, F, split = generate_sbm(spec, seed=0)
    labels = np.arange(10) % 2
    for i, j in g.edge_pairs():
        assert labels[i] == labels[j]
    per_class = 5
    assert g.m == 2 * (per_class * (per_class - 1) // 2)


def test_edge_count_within_binomial_bounds():
    spec = SyntheticSpec(n=500, classes=2, intra_p=0.02, inter_q=0.002,
                         feature_dim=2)
    n_intra_pairs = 2 * (250 * 249 // 2)
    n_inter_pairs = 250 * 250
    mean = n_intra_pairs * 0.02 + n_inter_pairs * 0.002
    var = (n_intra_pairs * 0.02 * 0.98 + n_inter_pairs * 0.002 * 0.998)
    for seed in range(3):
        g, _, _ = generate_sbm(spec, seed=seed)
        assert abs(g.m - mean) <= 4.0 * np.sqrt(var)


def test_generation_is_deterministic():
    spec = SyntheticSpec(n=60, classes=3, intra_p=0.2, inter_q=0.02,
                         feature_dim=3)
    g1, F1, s1 = generate_sbm(spec, seed=5)
    g2, F2, s2 = generate_sbm(spec, seed=5)
    assert g1.edge_pairs() == g2.edge_pairs()
    assert np.array_equal(F1, F2)
    assert np.array_equal(s1.train, s2.train)
    assert np.array_equal(s1.test, s2.test)


def test_balanced_class_sizes():
    spec = SyntheticSpec(n=10, classes=3, intra_p=0.5, inter_q=0.1,
                         feature_dim=3)
    _, _, split = generate_sbm(spec, seed=1)
    counts = np.bincount(split.labels, minlength=3)
    assert counts.max() - counts.min() <= 1


def test_split_ratios_and_disjointness():
    spec = SyntheticSpec(n=100, classes=2, intra_p=0.1, inter_q=0.01,
                         feature_dim=2, train_ratio=0.8, val_ratio=0.1)
    _, _, split = generate_sbm(spec, seed=2)
    assert split.train.size == 80
    assert split.val.size == 10
    assert split.test.size == 10
    combined = np.concatenate([split.train, split.val, split.test])
    assert np.unique(combined).size == 100


def test_feature_centers_on_scaled_corners():
    spec = SyntheticSpec(n=400, classes=2, intra_p=0.05, inter_q=0.01,
                         feature_dim=2, feature_scale=3.0, feature_sigma=0.1)
    _, F, split = generate_sbm(spec, seed=3)
    for c in range(2):
        center = F[split.labels == c].mean(axis=0)
        expected = np.zeros(2)
        expected[c] = 3.0
        assert np.linalg.norm(center - expected) < 0.1


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(intra_p=0.1, inter_q=0.5)
    with pytest.raises(ValueError):
        SyntheticSpec(classes=3, feature_dim=2)
    with pytest.raises(ValueError):
        SyntheticSpec(train_ratio=0.9, val_ratio=0.2)


def test_round_trip_is_identity(tmp_path):
    spec = SyntheticSpec(n=40, classes=2, intra_p=0.3, inter_q=0.05,
                         feature_dim=2)
    g, F, split = generate_sbm(spec, seed=4)
    paths = [tmp_path / p for p in ("edges.csv", "features.csv", "labels.csv")]
    save_dataset(*paths, g, F, split.labels)
    g2, F2, split2 = load_dataset(*paths)
    assert g2.edge_pairs() == g.edge_pairs()
    assert np.array_equal(F2, F)  # bit-identical through repr round trip
    assert np.array_equal(split2.labels, split.labels)

    save_dataset(*paths, g2, F2, split2.labels)  # second pass: same bytes
    g3, F3, split3 = load_dataset(*paths)
    assert np.array_equal(F3, F2)


def test_minimal_fixture_round_trip(tmp_path):
    (tmp_path / "edges.csv").write_text("src,dst\n0,1\n")
    (tmp_path / "features.csv").write_text("node,f0\n0,1.5\n1,-0.25\n")
    (tmp_path / "labels.csv").write_text("node,label\n0,0\n1,-1\n")
    g, F, split = load_dataset(tmp_path / "edges.csv", tmp_path / "features.csv",
                               tmp_path / "labels.csv")
    assert g.n == 2 and g.m == 1
    assert_allclose(F, [[1.5], [-0.25]])
    assert split.labels.tolist() == [0, -1]
    assert split.train.tolist() == [0]


def test_edge_referencing_missing_node_names_line(tmp_path):
    (tmp_path / "edges.csv").write_text("src,dst\n0,1\n1,9\n")
    (tmp_path / "features.csv").write_text("node,f0\n0,0.0\n1,0.0\n")
    with pytest.raises(ValueError, match=r"edges.csv:3"):
        load_dataset(tmp_path / "edges.csv", tmp_path / "features.csv")


def test_malformed_feature_row_names_line(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("node,f0\n0,0.0\n1,abc\n")
    with pytest.raises(ValueError, match=r"features.csv:3"):
        load_features(path)


def test_missing_label_file_gives_unknowns(tmp_path):
    (tmp_path / "edges.csv").write_text("src,dst\n0,1\n")
    (tmp_path / "features.csv").write_text("node,f0\n0,0.0\n1,1.0\n")
    g, F, split = load_dataset(tmp_path / "edges.csv", tmp_path / "features.csv")
    assert np.all(split.labels == -1)
    assert split.train.size == 0


def test_loaded_split_can_be_sampled(tmp_path):
    rng = np.random.default_rng(0)
    labels = np.array([0, 1, 0, 1, -1, 0, 1, 0])
    split = sample_split(labels, 0.5, 0.25, rng)
    labeled = np.flatnonzero(labels >= 0)
    assert split.train.size == round(0.5 * labeled.size)
    assert split.val.size == round(0.25 * labeled.size)
    assert set(np.concatenate([split.train, split.val, split.test])) == set(labeled)


def test_feature_round_trip_preserves_bits(tmp_path):
    rng = np.random.default_rng(1)
    F = rng.standard_normal((17, 3)) * np.array([1e-8, 1.0, 1e12])
    path = tmp_path / "f.csv"
    save_features(path, F)
    assert np.array_equal(load_features(path), F)
