import numpy as np
import pytest

from singular_pool.data import Graph
from singular_pool.gnn import GraphClassifier, TrainConfig
from singular_pool.pooling import PoolingKind

FLAT = ("sum", "average", "max")


def random_graph(rng, n=None, p=0.4, feat_dim=3, label=0, max_n=8):
    n = int(rng.integers(1, max_n + 1)) if n is None else n
    upper = np.triu(rng.random((n, n)) < p, 1)
    adj = (upper | upper.T).astype(float)
    return Graph(adj, rng.standard_normal((n, feat_dim)), label)


def random_classifier(rng, in_dim=3, kind="gcn", pooling=None, classes=2, hidden=4, layers=2):
    cfg = TrainConfig(hidden=hidden, layers=layers, head_hidden=5, seed=int(rng.integers(1 << 30)))
    return GraphClassifier.init(kind, in_dim, classes, pooling or PoolingKind("sum"), cfg)


def all_poolings(k=3):
    return [PoolingKind(v) for v in FLAT] + [PoolingKind.rs(k, tau=1.0)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, str] = {}


def record(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


def kink_margin(clf, g) -> float:
    """Distance from the nearest non-differentiable point of the forward pass.

    Covers every ReLU pre-activation and, for max pooling, the gap between the
    top two entries of each column. Finite differences are only a valid
    gradient oracle when this margin is well above the step size.
    """
    op = clf.model.operator(g.adjacency).data
    pre = []
    h = g.features
    arrays = clf.model.arrays()
    if clf.model.kind == "gcn":
        for w in arrays:
            z = op @ h @ w
            pre.append(z)
            h = np.maximum(z, 0)
    else:
        for wa, wb in zip(arrays[::2], arrays[1::2]):
            z = op @ h @ wa
            pre.append(z)
            z2 = np.maximum(z, 0) @ wb
            pre.append(z2)
            h = np.maximum(z2, 0)
    margins = [float(np.abs(z).min()) for z in pre]
    if clf.pooling.variant == "max" and h.shape[0] > 1:
        top = np.sort(h, axis=0)
        margins.append(float((top[-1] - top[-2]).min()))
    if clf.pooling.variant == "rs_pool" and not np.any(h):
        return 0.0
    from singular_pool.pooling import pool
    from singular_pool.tensor import Tensor

    z = pool(Tensor(h), clf.pooling).data
    margins.append(float(np.abs(z @ clf.head.w1 + clf.head.b1).min()))
    return min(margins)
