"""Graphs, datasets, TUDataset ingestion, folds and synthetic corpora."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Graph",
    "Dataset",
    "SplitSpec",
    "IngestError",
    "ParseError",
    "ValidationError",
    "load_tudataset",
    "normalized_adjacency",
    "make_splits",
    "load_splits",
    "save_splits",
    "synth_dataset",
]


class IngestError(FileNotFoundError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected graph with binary symmetric adjacency and node features."""

    adjacency: np.ndarray
    features: np.ndarray
    label: int = 0
    id: int = 0

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.float64)
        x = np.array(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError(f"adjacency must be square with n >= 1, got {a.shape}")
        if not np.isin(a, (0.0, 1.0)).all():
            raise ValidationError("adjacency must be binary")
        if not np.array_equal(a, a.T):
            raise ValidationError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValidationError("adjacency must have a zero diagonal")
        if x.ndim != 2 or x.shape[0] != a.shape[0]:
            raise ValidationError(f"features {x.shape} do not match {a.shape[0]} nodes")
        if not np.isfinite(x).all():
            raise ValidationError("features must be finite")
        a.flags.writeable = False
        x.flags.writeable = False
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", int(self.label))

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    @property
    def m(self) -> int:
        return int(self.adjacency.sum() // 2)

    def replace(self, adjacency=None, features=None) -> "Graph":
        return Graph(
            self.adjacency if adjacency is None else adjacency,
            self.features if features is None else features,
            self.label,
            self.id,
        )

    def permute(self, perm) -> "Graph":
        """Relabel nodes so that new node ``i`` is old node ``perm[i]``."""
        p = np.asarray(perm)
        return Graph(self.adjacency[np.ix_(p, p)], self.features[p], self.label, self.id)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.adjacency, other.adjacency)
            and np.array_equal(self.features, other.features)
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[Graph, ...]
    num_classes: int
    name: str = "dataset"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise ValidationError("dataset is empty")
        dims = {g.feature_dim for g in self.graphs}
        if len(dims) != 1:
            raise ValidationError(f"graphs disagree on feature dim: {sorted(dims)}")
        for g in self.graphs:
            if not 0 <= g.label < self.num_classes:
                raise ValidationError(f"graph {g.id} label {g.label} outside [0, {self.num_classes})")

    @property
    def feature_dim(self) -> int:
        return self.graphs[0].feature_dim

    @property
    def labels(self) -> np.ndarray:
        return np.array([g.label for g in self.graphs])

    def __len__(self) -> int:
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]

    def __iter__(self):
        return iter(self.graphs)

    def feature_norm_bound(self) -> float:
        """Largest spectral norm of any feature matrix."""
        return max(float(np.linalg.norm(g.features, 2)) for g in self.graphs)


@dataclass(frozen=True)
class SplitSpec:
    assignment: np.ndarray
    folds: int = 10
    seed: int | None = None

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=int)
        if a.ndim != 1 or (a.size and (a.min() < 0 or a.max() >= self.folds)):
            raise ValidationError("fold assignment out of range")
        object.__setattr__(self, "assignment", a)

    def test_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        self._check(fold)
        return np.flatnonzero(self.assignment != fold)

    def _check(self, fold):
        if not 0 <= fold < self.folds:
            raise ValidationError(f"fold {fold} outside [0, {self.folds})")

    def __eq__(self, other):
        return (
            isinstance(other, SplitSpec)
            and self.folds == other.folds
            and np.array_equal(self.assignment, other.assignment)
        )


# --- TUDataset ----------------------------------------------------------------


def _read_ints(path: Path) -> list[list[int]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([int(float(tok)) for tok in line.split(",")])
            except ValueError as exc:
                raise ParseError(f"{path.name} line {lineno}: {exc}") from None
    return rows


def _read_floats(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ParseError(f"{path.name} line {lineno}: {exc}") from None
    return np.array(rows, dtype=np.float64)


def load_tudataset(directory, name: str) -> Dataset:
    """Read a dataset stored in the TUDataset flat-file layout.

    Edges are symmetrised and self-loops dropped. Node labels are one-hot
    encoded in ascending label order; node attributes, when present, take
    precedence and are used verbatim. Featureless datasets get a constant
    all-ones column.
    """
    root = Path(directory)
    paths = {k: root / f"{name}_{k}.txt" for k in ("A", "graph_indicator", "graph_labels")}
    for p in paths.values():
        if not p.exists():
            raise IngestError(f"missing mandatory file {p.name} in {root}")

    indicator = np.array([r[0] for r in _read_ints(paths['graph_indicator'])])
    n_total = indicator.size
    graph_labels = np.array([r[0] for r in _read_ints(paths["graph_labels"])])
    n_graphs = graph_labels.size
    if indicator.size and (indicator.min() < 1 or indicator.max() > n_graphs):
        bad = int(np.flatnonzero((indicator < 1) | (indicator > n_graphs))[0])
        raise ParseError(f"{paths['graph_indicator'].name} line {bad + 1}: graph id out of range")

    edges = []
    with open(paths['A']) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                u, v = (int(tok) for tok in line.split(","))
            except ValueError:
                raise ParseError(f"{paths['A'].name} line {lineno}: expected 'u, v'") from None
            if not (1 <= u <= n_total and 1 <= v <= n_total):
                raise ParseError(f"{paths['A'].name} line {lineno}: node index out of range 1..{n_total}")
            if indicator[u - 1] != indicator[v - 1]:
                raise ParseError(f"{paths['A'].name} line {lineno}: edge crosses graphs")
            edges.append((u - 1, v - 1))

    attr_path = root / f"{name}_node_attributes.txt"
    label_path = root / f"{name}_node_labels.txt"
    featurization = "constant"
    if attr_path.exists():
        feats = _read_floats(attr_path)
        if feats.ndim == 1:
            feats = feats[:, None]
        featurization = "node_attributes"
    elif label_path.exists():
        node_labels = np.array([r[0] for r in _read_ints(label_path)])
        values = np.unique(node_labels)
        feats = (node_labels[:, None] == values[None, :]).astype(np.float64)
        featurization = "node_labels_onehot"
    else:
        feats = np.ones((n_total, 1))
    if feats.shape[0] != n_total:
        raise ParseError(f"feature file has {feats.shape[0]} rows, expected {n_total}")

    classes = np.unique(graph_labels)
    remap = {int(c): i for i, c in enumerate(classes)}

    order = np.argsort(indicator, kind="stable")
    starts = np.searchsorted(indicator[order], np.arange(1, n_graphs + 2))
    local = np.empty(n_total, dtype=int)
    members = []
    for gi in range(n_graphs):
        nodes = order[starts[gi] : starts[gi + 1]]
        local[nodes] = np.arange(nodes.size)
        members.append(nodes)
    adj = [np.zeros((len(m), len(m))) for m in members]
    for u, v in edges:
        if u == v:
            continue
        a = adj[indicator[u] - 1]
        a[local[u], local[v]] = 1.0
        a[local[v], local[u]] = 1.0

    graphs = []
    for gi, nodes in enumerate(members):
        if nodes.size == 0:
            raise ParseError(f"graph {gi + 1} has no nodes")
        graphs.append(Graph(adj[gi], feats[nodes], remap[int(graph_labels[gi])], gi))
    return Dataset(tuple(graphs), len(classes), name, {"featurization": featurization})


# --- propagation operator -------------------------------------------------------


def normalized_adjacency(g: Graph) -> np.ndarray:
    """Symmetric GCN operator ``D^-1/2 (A + I) D^-1/2`` with ``D = diag(1 + deg)``."""
    a = g.adjacency + np.eye(g.n)
    inv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * inv[:, None] * inv[None, :]


# --- folds ------------------------------------------------------------------------


def make_splits(ds: Dataset, folds: int = 10, seed: int = 0) -> SplitSpec:
    """Stratified fold assignment.

    Each class is shuffled and dealt round-robin, continuing the deal where the
    previous class stopped so fold sizes stay within one of each other.
    """
    if not 2 <= folds <= len(ds):
        raise ValidationError(f"need 2 <= folds <= {len(ds)}, got {folds}")
    rng = np.random.default_rng(seed)
    labels = ds.labels
    assignment = np.empty(len(ds), dtype=int)
    offset = 0
    for c in range(ds.num_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        assignment[idx] = (offset + np.arange(idx.size)) % folds
        offset = (offset + idx.size) % folds
    return SplitSpec(assignment, folds, seed)


def load_splits(path, n_graphs: int | None = None) -> SplitSpec:
    """Read ``{"folds": [[test indices], ...]}``; every index must appear once."""
    with open(path) as fh:
        doc = json.load(fh)
    try:
        folds = doc["folds"]
    except (KeyError, TypeError):
        raise ValidationError(f"{path}: expected an object with a 'folds' list") from None
    all_idx = [int(i) for f in folds for i in f]
    total = n_graphs if n_graphs is not None else len(all_idx)
    assignment = np.full(total, -1, dtype=int)
    for k, fold in enumerate(folds):
        for i in fold:
            i = int(i)
            if not 0 <= i < total:
                raise ValidationError(f"{path}: fold {k} index {i} out of range [0, {total})")
            if assignment[i] != -1:
                raise ValidationError(f"{path}: index {i} appears in more than one fold")
            assignment[i] = k
    if (assignment < 0).any():
        missing = np.flatnonzero(assignment < 0)[:5].tolist()
        raise ValidationError(f"{path}: indices {missing} are not assigned to any fold")
    return SplitSpec(assignment, len(folds), None)


def save_splits(split: SplitSpec, path) -> None:
    folds = [split.test_indices(k).tolist() for k in range(split.folds)]
    Path(path).write_text(json.dumps({"folds": folds}))


# --- synthetic corpora -------------------------------------------------------------


def _degree_features(adj: np.ndarray) -> np.ndarray:
    n = adj.shape[0]
    return (adj.sum(axis=1) / max(n - 1, 1))[:, None]


def synth_dataset(kind: str, n_graphs: int, n_nodes: int, seed: int = 0) -> Dataset:
    """Two-class corpora separable by structure.

    ``cycle-vs-path``: class 0 are cycles C_n, class 1 paths P_n, each with a
    random node order. ``density-pair``: Erdos-Renyi graphs with p=0.2
    (class 0) and p=0.6 (class 1). Node features are degree / (n-1) for both.
    """
    if n_graphs % 2 or n_graphs <= 0:
        raise ValidationError("n_graphs must be positive and even")
    if n_nodes < 4:
        raise ValidationError("n_nodes must be at least 4")
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(n_graphs):
        label = i % 2
        if kind == "cycle-vs-path":
            adj = np.zeros((n_nodes, n_nodes))
            idx = np.arange(n_nodes - 1)
            adj[idx, idx + 1] = 1.0
            if label == 0:
                adj[0, n_nodes - 1] = 1.0
            adj = adj + adj.T
            p = rng.permutation(n_nodes)
            adj = adj[np.ix_(p, p)]
            feats = _degree_features(adj)
        elif kind == "density-pair":
            prob = 0.2 if label == 0 else 0.6
            upper = np.triu(rng.random((n_nodes, n_nodes)) < prob, 1)
            adj = (upper | upper.T).astype(np.float64)
            feats = _degree_features(adj)
        else:
            raise ValidationError(f"unknown synthetic kind {kind!r}")
        graphs.append(Graph(adj, feats, label, i))
    return Dataset(tuple(graphs), 2, f"synth-{kind}", {"featurization": "normalized-degree", "seed": seed})
