import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singular_pool.data import (
    Dataset,
    Graph,
    IngestError,
    ParseError,
    SplitSpec,
    ValidationError,
    load_splits,
    load_tudataset,
    make_splits,
    normalized_adjacency,
    save_splits,
    synth_dataset,
)

MUTAG = Path(__file__).parent / "data" / "MUTAG"


def write_toy(root: Path, edges="1, 2\n", name="TOY"):
    root.mkdir(parents=True, exist_ok=True)
    (root / f"{name}_A.txt").write_text(edges)
    (root / f"{name}_graph_indicator.txt").write_text("1\n1\n2\n")
    (root / f"{name}_graph_labels.txt").write_text("1\n2\n")
    return root


def test_toy_directory(tmp_path):
    ds = load_tudataset(write_toy(tmp_path), "TOY")
    assert len(ds) == 2 and ds.num_classes == 2
    assert [g.label for g in ds] == [0, 1]
    np.testing.assert_array_equal(ds[0].adjacency, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(ds[1].adjacency, [[0]])
    # featureless data falls back to a constant column
    np.testing.assert_array_equal(ds[0].features, np.ones((2, 1)))
    assert ds.meta["featurization"] == "constant"


def test_symmetrization_idempotent(tmp_path):
    one = load_tudataset(write_toy(tmp_path / "a", "1, 2\n"), "TOY")
    both = load_tudataset(write_toy(tmp_path / "b", "1, 2\n2, 1\n"), "TOY")
    assert one[0] == both[0]


def test_self_loops_dropped(tmp_path):
    ds = load_tudataset(write_toy(tmp_path, "1, 2\n1, 1\n"), "TOY")
    assert np.all(np.diag(ds[0].adjacency) == 0)


def test_missing_file_named(tmp_path):
    root = write_toy(tmp_path)
    (root / "TOY_graph_labels.txt").unlink()
    with pytest.raises(IngestError, match="TOY_graph_labels.txt"):
        load_tudataset(root, "TOY")


def test_out_of_range_node_reports_line(tmp_path):
    root = write_toy(tmp_path, "1, 2\n2, 9\n")
    with pytest.raises(ParseError, match="line 2"):
        load_tudataset(root, "TOY")


def test_node_labels_one_hot(tmp_path):
    root = write_toy(tmp_path)
    (root / "TOY_node_labels.txt").write_text("5\n2\n5\n")
    ds = load_tudataset(root, "TOY")
    np.testing.assert_array_equal(ds[0].features, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(ds[1].features, [[0, 1]])


def test_mutag_vendored():
    ds = load_tudataset(MUTAG, "MUTAG")
    assert len(ds) == 188 and ds.num_classes == 2
    assert sum(g.n for g in ds) == 3371
    assert ds.feature_dim == 7
    assert sorted(np.bincount(ds.labels).tolist()) == [63, 125]
    for g in ds:
        np.testing.assert_array_equal(g.adjacency, g.adjacency.T)
        np.testing.assert_array_equal(g.features.sum(axis=1), 1.0)


def test_normalized_adjacency_examples():
    single = Graph(np.zeros((1, 1)), np.ones((1, 1)))
    np.testing.assert_array_equal(normalized_adjacency(single), [[1.0]])
    path = Graph(np.array([[0.0, 1], [1, 0]]), np.ones((2, 1)))
    np.testing.assert_allclose(normalized_adjacency(path), 0.5, atol=1e-15)
    tri = Graph(np.ones((3, 3)) - np.eye(3), np.ones((3, 1)))
    np.testing.assert_allclose(normalized_adjacency(tri), 1 / 3, atol=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.integers(3, 12), st.integers(1, 5), st.integers(0, 2**31))
def test_regular_graphs_have_unit_row_sums(n, k, seed):
    # circulant graphs are regular
    k = min(k, (n - 1) // 2)
    adj = np.zeros((n, n))
    for i in range(n):
        for s in range(1, k + 1):
            adj[i, (i + s) % n] = adj[(i + s) % n, i] = 1
    perm = np.random.default_rng(seed).permutation(n)
    g = Graph(adj[np.ix_(perm, perm)], np.ones((n, 1)))
    np.testing.assert_allclose(normalized_adjacency(g).sum(axis=1), 1.0, atol=1e-12)


def test_graph_invariants_enforced():
    with pytest.raises(ValidationError):
        Graph(np.array([[0.0, 1], [0, 0]]), np.ones((2, 1)))
    with pytest.raises(ValidationError):
        Graph(np.array([[1.0]]), np.ones((1, 1)))
    with pytest.raises(ValidationError):
        Graph(np.array([[0.0, 2], [2, 0]]), np.ones((2, 1)))
    with pytest.raises(ValidationError):
        Graph(np.zeros((2, 2)), np.ones((3, 1)))


def _balanced(n=10):
    graphs = tuple(Graph(np.zeros((1, 1)), np.ones((1, 1)), i % 2, i) for i in range(n))
    return Dataset(graphs, 2)


def test_stratified_folds():
    split = make_splits(_balanced(10), 5, seed=0)
    labels = _balanced(10).labels
    for f in range(5):
        assert sorted(labels[split.test_indices(f)].tolist()) == [0, 1]


def test_split_determinism_and_coverage():
    ds = load_tudataset(MUTAG, "MUTAG")
    a, b = make_splits(ds, 10, 3), make_splits(ds, 10, 3)
    assert a == b
    tests = np.concatenate([a.test_indices(f) for f in range(10)])
    assert sorted(tests.tolist()) == list(range(len(ds)))
    for f in range(10):
        assert set(a.test_indices(f)).isdisjoint(a.train_indices(f))


def test_fold_file_round_trip(tmp_path):
    split = make_splits(_balanced(10), 5, 1)
    save_splits(split, tmp_path / "folds.json")
    assert load_splits(tmp_path / "folds.json", 10) == split


@pytest.mark.parametrize(
    "folds",
    [[[0, 1], [2, 12]], [[0, 1], [1, 2]], [[0, 1], [2]]],
    ids=["out-of-range", "duplicate", "missing"],
)
def test_fold_file_validation(tmp_path, folds):
    p = tmp_path / "f.json"
    p.write_text(json.dumps({"folds": folds}))
    with pytest.raises(ValidationError):
        load_splits(p, 4)


def test_synthetic_cycle_vs_path():
    ds = synth_dataset("cycle-vs-path", 10, 6, seed=0)
    for g in ds:
        assert g.m == (6 if g.label == 0 else 5)


def test_synthetic_density_pair():
    ds = synth_dataset("density-pair", 40, 10, seed=0)
    m = np.array([g.m for g in ds])
    assert m[ds.labels == 1].mean() > m[ds.labels == 0].mean()


@pytest.mark.parametrize("kind", ["cycle-vs-path", "density-pair"])
def test_synthetic_determinism(kind):
    assert synth_dataset(kind, 8, 6, 4) == synth_dataset(kind, 8, 6, 4)


def test_permute_relabels_nodes():
    rng = np.random.default_rng(0)
    g = synth_dataset("density-pair", 2, 7, 1)[1]
    perm = rng.permutation(7)
    h = g.permute(perm)
    assert h.m == g.m
    np.testing.assert_array_equal(np.sort(h.degrees), np.sort(g.degrees))
