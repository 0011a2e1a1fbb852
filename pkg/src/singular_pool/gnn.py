"""GCN / GIN message passing, the MLP readout head, and training."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import Dataset, Graph, SplitSpec, normalized_adjacency
from .pooling import DegenerateInputError, PoolingKind, pool
from .tensor import Tape, Tensor

__all__ = [
    "GcnModel",
    "GinModel",
    "ReadoutHead",
    "TrainConfig",
    "GraphClassifier",
    "TrainingError",
    "glorot",
    "normalized_adjacency_t",
    "gcn_forward",
    "gin_forward",
    "predict",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]


class TrainingError(RuntimeError):
    pass


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def normalized_adjacency_t(a: Tensor) -> Tensor:
    """Differentiable ``D^-1/2 (A + I) D^-1/2`` for an adjacency tensor."""
    a_tilde = T.add(a, Tensor(np.eye(a.rows)))
    dinv = T.power(T.row_sum(a_tilde), -0.5)
    return T.mul(a_tilde, T.matmul(dinv, T.transpose(dinv)))


def _check_weights(weights: Sequence[np.ndarray]) -> list[np.ndarray]:
    out = [np.array(w, dtype=np.float64) for w in weights]
    if not out:
        raise ValueError("a model needs at least one layer")
    for w in out:
        if w.ndim != 2 or not np.isfinite(w).all():
            raise ValueError("weights must be finite matrices")
    return out


@dataclass
class GcnModel:
    """``H <- ReLU(A_hat H W)`` for each weight matrix in order."""

    weights: list[np.ndarray]

    def __post_init__(self):
        self.weights = _check_weights(self.weights)
        for a, b in zip(self.weights, self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"layer dims do not chain: {a.shape} -> {b.shape}")

    kind = "gcn"

    @classmethod
    def init(cls, in_dim: int, hidden: int = 32, layers: int = 2, rng=None) -> "GcnModel":
        rng = np.random.default_rng(rng)
        dims = [in_dim] + [hidden] * layers
        return cls([glorot(rng, a, b) for a, b in zip(dims, dims[1:])])

    @property
    def layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return list(self.weights)

    def rebuild(self, arrays: list[np.ndarray]) -> "GcnModel":
        return GcnModel([np.array(a) for a in arrays])

    def norm_matrices(self) -> list[np.ndarray]:
        return list(self.weights)

    def operator(self, adjacency) -> Tensor:
        if isinstance(adjacency, Tensor):
            return normalized_adjacency_t(adjacency) if adjacency.requires_grad else Tensor(_norm_adj(adjacency.data))
        return Tensor(_norm_adj(np.asarray(adjacency, dtype=float)))

    def embed(self, op: Tensor, x: Tensor, params: Sequence[Tensor]) -> Tensor:
        h = x
        for w in params:
            h = T.relu(T.matmul(op, T.matmul(h, w)))
        return h


@dataclass
class GinModel:
    """``H <- ReLU(ReLU((A + I) H W_a) W_b)`` per layer, i.e. zeta fixed at 0."""

    mlps: list[tuple[np.ndarray, np.ndarray]]
    zeta: float = 0.0

    kind = "gin"

    def __post_init__(self):
        if self.zeta != 0.0:
            raise ValueError("GIN here is defined with zeta = 0")
        mlps = [tuple(_check_weights(pair)) for pair in self.mlps]
        if not mlps:
            raise ValueError("a model needs at least one layer")
        flat = [w for pair in mlps for w in pair]
        for a, b in zip(flat, flat[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError(f"MLP dims do not chain: {a.shape} -> {b.shape}")
        self.mlps = mlps

    @classmethod
    def init(cls, in_dim: int, hidden: int = 32, layers: int = 2, rng=None) -> "GinModel":
        rng = np.random.default_rng(rng)
        mlps = []
        d = in_dim
        for _ in range(layers):
            mlps.append((glorot(rng, d, hidden), glorot(rng, hidden, hidden)))
            d = hidden
        return cls(mlps)

    @property
    def layers(self) -> int:
        return len(self.mlps)

    @property
    def in_dim(self) -> int:
        return self.mlps[0][0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.mlps[-1][1].shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [w for pair in self.mlps for w in pair]

    def rebuild(self, arrays: list[np.ndarray]) -> "GinModel":
        it = iter(np.array(a) for a in arrays)
        return GinModel(list(zip(it, it)))

    def norm_matrices(self) -> list[np.ndarray]:
        return self.arrays()

    def operator(self, adjacency) -> Tensor:
        if isinstance(adjacency, Tensor):
            if adjacency.requires_grad:
                return T.add(adjacency, Tensor(np.eye(adjacency.rows)))
            adjacency = adjacency.data
        a = np.asarray(adjacency, dtype=float)
        return Tensor(a + np.eye(a.shape[0]))

    def embed(self, op: Tensor, x: Tensor, params: Sequence[Tensor]) -> Tensor:
        h = x
        for i in range(0, len(params), 2):
            z = T.matmul(op, h)
            h = T.relu(T.matmul(T.relu(T.matmul(z, params[i])), params[i + 1]))
        return h


def _norm_adj(a: np.ndarray) -> np.ndarray:
    a_tilde = a + np.eye(a.shape[0])
    inv = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return a_tilde * inv[:, None] * inv[None, :]


@dataclass
class ReadoutHead:
    """One-hidden-layer MLP from the pooled vector to class logits."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    @classmethod
    def init(cls, in_dim: int, num_classes: int, hidden: int = 32, rng=None) -> "ReadoutHead":
        rng = np.random.default_rng(rng)
        return cls(
            glorot(rng, in_dim, hidden),
            np.zeros((1, hidden)),
            glorot(rng, hidden, num_classes),
            np.zeros((1, num_classes)),
        )

    @classmethod
    def zeros(cls, in_dim: int, num_classes: int, hidden: int = 32) -> "ReadoutHead":
        return cls(np.zeros((in_dim, hidden)), np.zeros((1, hidden)), np.zeros((hidden, num_classes)), np.zeros((1, num_classes)))

    @property
    def num_classes(self) -> int:
        return self.w2.shape[1]

    def arrays(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]

    @staticmethod
    def apply(z: Tensor, params: Sequence[Tensor]) -> Tensor:
        w1, b1, w2, b2 = params
        hidden = T.relu(T.add(T.matmul(z, w1), b1))
        return T.add(T.matmul(hidden, w2), b2)


@dataclass
class TrainConfig:
    epochs: int = 100
    lr: float = 1e-3
    hidden: int = 32
    layers: int = 2
    head_hidden: int = 32
    seed: int = 0
    repeats: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.lr <= 0 or self.hidden < 1 or self.layers < 1 or self.repeats < 1:
            raise ValueError("training hyperparameters must be positive")


@dataclass
class GraphClassifier:
    """Message passing, pooling and readout bundled for inference and attacks."""

    model: GcnModel | GinModel
    head: ReadoutHead
    pooling: PoolingKind

    @classmethod
    def init(cls, kind: str, in_dim: int, num_classes: int, pooling: PoolingKind, config: TrainConfig | None = None):
        config = config or TrainConfig()
        rng = np.random.default_rng(config.seed)
        model_cls = {"gcn": GcnModel, "gin": GinModel}[kind]
        model = model_cls.init(in_dim, config.hidden, config.layers, rng)
        head = ReadoutHead.init(model.out_dim, num_classes, config.head_hidden, rng)
        return cls(model, head, pooling)

    def arrays(self) -> list[np.ndarray]:
        return self.model.arrays() + self.head.arrays()

    def rebuild(self, arrays: list[np.ndarray]) -> "GraphClassifier":
        k = len(self.model.arrays())
        return GraphClassifier(self.model.rebuild(arrays[:k]), ReadoutHead(*[np.array(a) for a in arrays[k:]]), self.pooling)

    def bind(self, tape: Tape | None) -> list[Tensor]:
        if tape is None:
            return [Tensor(a) for a in self.arrays()]
        return [tape.watch(a) for a in self.arrays()]

    def embed(self, adjacency, features, params: Sequence[Tensor] | None = None) -> Tensor:
        params = self.bind(None) if params is None else params
        k = len(self.model.arrays())
        x = T.as_tensor(features)
        if x.cols != self.model.in_dim:
            raise T.ContractError(f"graph has {x.cols} features, model expects {self.model.in_dim}")
        return self.model.embed(self.model.operator(adjacency), x, params[:k])

    def pooled(self, adjacency, features, params=None) -> Tensor:
        return pool(self.embed(adjacency, features, params), self.pooling)

    def logits(self, adjacency, features, params: Sequence[Tensor] | None = None) -> Tensor:
        params = self.bind(None) if params is None else params
        if self.pooling.variant == "rs_pool" and self.pooling.output_mode == "projected":
            raise T.ContractError("projected RS-Pool output has node-count length and cannot feed the head")
        k = len(self.model.arrays())
        h = self.embed(adjacency, features, params)
        try:
            z = pool(h, self.pooling)
        except DegenerateInputError:
            # every unit is dead, so no singular direction exists; read out zeros
            z = Tensor(np.zeros((1, h.cols)))
        return self.head.apply(z, params[k:])

    def loss(self, adjacency, features, label: int, params=None) -> Tensor:
        return T.softmax_cross_entropy(self.logits(adjacency, features, params), label)

    def predict_graph(self, g: Graph) -> int:
        return int(np.argmax(self.logits(g.adjacency, g.features).data[0]))


def gcn_forward(model: GcnModel, g: Graph, params: Sequence[Tensor] | None = None) -> Tensor:
    if g.feature_dim != model.in_dim:
        raise T.ContractError(f"graph has {g.feature_dim} features, model expects {model.in_dim}")
    params = [Tensor(w) for w in model.weights] if params is None else params
    return model.embed(Tensor(normalized_adjacency(g)), Tensor(g.features), params)


def gin_forward(model: GinModel, g: Graph, params: Sequence[Tensor] | None = None) -> Tensor:
    if g.feature_dim != model.in_dim:
        raise T.ContractError(f"graph has {g.feature_dim} features, model expects {model.in_dim}")
    params = [Tensor(w) for w in model.arrays()] if params is None else params
    return model.embed(model.operator(g.adjacency), Tensor(g.features), params)


def predict(model, head: ReadoutHead, pooling: PoolingKind, g: Graph) -> np.ndarray:
    """Logits ``head(pool(forward(model, g)))`` as a 1-D array."""
    return GraphClassifier(model, head, pooling).logits(g.adjacency, g.features).data[0].copy()


def evaluate(clf: GraphClassifier, graphs: Sequence[Graph]) -> float:
    """Fraction of graphs whose argmax logit (lowest index on ties) is the label."""
    graphs = list(graphs)
    if not graphs:
        raise T.ContractError("evaluate needs at least one graph")
    correct = sum(clf.predict_graph(g) == g.label for g in graphs)
    return correct / len(graphs)


@dataclass
class TrainResult:
    classifier: GraphClassifier
    losses: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    final_train_accuracy: float = float("nan")
    test_accuracy: float = float("nan")


def train(
    ds: Dataset,
    split: SplitSpec | None,
    fold: int,
    pooling: PoolingKind,
    config: TrainConfig | None = None,
    model: str = "gcn",
    evaluate_test: bool = True,
) -> TrainResult:
    """Adam on per-graph cross-entropy, one update per training graph.

    The graph order is reshuffled each epoch from the config seed. ``split``
    of ``None`` trains on every graph.
    """
    config = config or TrainConfig()
    if split is None:
        train_idx = np.arange(len(ds))
        test_idx = np.array([], dtype=int)
    else:
        train_idx = split.train_indices(fold)
        test_idx = split.test_indices(fold)
    clf = GraphClassifier.init(model, ds.feature_dim, ds.num_classes, pooling, config)
    params = [a.copy() for a in clf.arrays()]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng([config.seed, 1])
    b1, b2, eps, lr = config.beta1, config.beta2, config.adam_eps, config.lr
    step = 0
    result = TrainResult(clf)
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        total = 0.0
        hits = 0
        for gi in order:
            g = ds.graphs[gi]
            tape = Tape()
            leaves = [tape.watch(p) for p in params]
            try:
                logits = clf.logits(g.adjacency, g.features, leaves)
                loss = T.softmax_cross_entropy(logits, g.label)
                lv = loss.item()
                if not np.isfinite(lv):
                    raise T.NumericError("loss")
                T.backward(loss)
            except T.NumericError as exc:
                raise TrainingError(f"non-finite loss at epoch {epoch} ({exc})") from None
            total += lv
            hits += int(np.argmax(logits.data[0]) == g.label)
            step += 1
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for i, leaf in enumerate(leaves):
                gr = leaf.grad
                m[i] = b1 * m[i] + (1 - b1) * gr
                v[i] = b2 * v[i] + (1 - b2) * gr * gr
                params[i] = params[i] - lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)
        if not all(np.isfinite(p).all() for p in params):
            raise TrainingError(f"weights diverged at epoch {epoch}")
        result.losses.append(total / max(len(order), 1))
        result.train_accuracy.append(hits / max(len(order), 1))
    clf = clf.rebuild(params)
    result.classifier = clf
    if result.train_accuracy:
        result.final_train_accuracy = result.train_accuracy[-1]
    if evaluate_test and test_idx.size:
        result.test_accuracy = evaluate(clf, [ds.graphs[i] for i in test_idx])
    return result


# --- checkpoints -------------------------------------------------------------------------


def save_checkpoint(clf: GraphClassifier, path, config: TrainConfig | None = None, extra: dict | None = None) -> None:
    doc = {
        "model": clf.model.kind,
        "shapes": [list(a.shape) for a in clf.arrays()],
        "n_model_arrays": len(clf.model.arrays()),
        "weights": [a.ravel().tolist() for a in clf.arrays()],
        "pooling": clf.pooling.to_dict(),
        "config": asdict(config) if config is not None else None,
    }
    if extra:
        doc["extra"] = extra
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(doc))
    tmp.replace(path)


def load_checkpoint(path) -> tuple[GraphClassifier, dict]:
    doc = json.loads(Path(path).read_text())
    arrays = [np.array(w, dtype=np.float64).reshape(s) for w, s in zip(doc["weights"], doc["shapes"])]
    k = doc["n_model_arrays"]
    if doc["model"] == "gcn":
        model = GcnModel(arrays[:k])
    else:
        it = iter(arrays[:k])
        model = GinModel(list(zip(it, it)))
    clf = GraphClassifier(model, ReadoutHead(*arrays[k:]), PoolingKind.from_dict(doc["pooling"]))
    return clf, doc
