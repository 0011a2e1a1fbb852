"""Closed-form robustness certificates for pooled GNN readouts.

All bounds share the product of layer operator norms. Flat GCN readouts add a
walk factor built from ``w_hat``, the row sums of ``A_hat^(L-1)``; the GIN
bounds use degree / edge counts and a feature-norm bound ``B``; the
singular-vector readout uses the spectral gap of the clean embedding and is
clamped at ``2 tau``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Graph, normalized_adjacency
from .gnn import GcnModel, GinModel, GraphClassifier, gcn_forward
from .pooling import GAP_RTOL, PoolingKind, pool, svd_oracle
from .tensor import Tensor

__all__ = [
    "BoundReport",
    "walk_weights",
    "walk_weights_bruteforce",
    "operator_norm",
    "weight_norm_product",
    "bound_gcn",
    "bound_gin",
    "bound_rs_pool",
    "sphere_sample",
    "empirical_risk",
]


@dataclass
class BoundReport:
    gamma: float
    pooling: str
    epsilon: float
    weight_norm_product: float
    walk_term: float
    spectral_gap: float | None = None
    tau: float | None = None
    gamma_unclamped: float | None = None
    clamped_by_2tau: bool = False
    degenerate_gap: bool = False
    details: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("gamma", "gamma_unclamped"):
            if d[k] is not None and math.isinf(d[k]):
                d[k] = "inf"
        return d


def walk_weights(g: Graph, layers: int) -> np.ndarray:
    """``w_hat_u = sum_v (A_hat^(L-1))_uv``."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    a_hat = normalized_adjacency(g)
    w = np.ones(g.n)
    for _ in range(layers - 1):
        w = a_hat @ w
    return w


def walk_weights_bruteforce(g: Graph, layers: int) -> np.ndarray:
    """Enumerate every walk of length ``L-1`` over closed neighbourhoods.

    A walk ``u = v0, v1, ..., vk`` contributes
    ``1 / (sqrt(1+d_v0) * (1+d_v1) * ... * (1+d_v{k-1}) * sqrt(1+d_vk))``.
    """
    if layers < 1:
        raise ValueError("layers must be >= 1")
    if layers == 1:
        return np.ones(g.n)  # only the empty walk, and A_hat^0 = I
    deg = g.degrees
    closed = [[u] + list(np.flatnonzero(g.adjacency[u])) for u in range(g.n)]
    out = np.zeros(g.n)
    steps = layers - 1
    for u in range(g.n):
        total = 0.0
        stack = [(u, (u,))]
        while stack:
            node, path = stack.pop()
            if len(path) == steps + 1:
                denom = math.sqrt(1 + deg[path[0]]) * math.sqrt(1 + deg[path[-1]])
                for mid in path[1:-1]:
                    denom *= 1 + deg[mid]
                total += 1.0 / denom
                continue
            for nxt in closed[node]:
                stack.append((nxt, path + (nxt,)))
        out[u] = total
    return out


def operator_norm(w) -> float:
    """Largest singular value."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("operator_norm of an empty matrix")
    return svd_oracle(w).sigma1


def weight_norm_product(model) -> float:
    return float(np.prod([operator_norm(w) for w in model.norm_matrices()]))


def bound_gcn(model: GcnModel, g: Graph, epsilon: float, pooling: str) -> BoundReport:
    """Flat-readout certificate for an L-layer GCN under feature perturbation."""
    pooling = getattr(pooling, "variant", pooling)
    w = walk_weights(g, model.layers)
    prod = weight_norm_product(model)
    if pooling == "sum":
        walk = float(w.sum())
    elif pooling == "average":
        walk = float(w.sum()) / g.n
    elif pooling == "max":
        walk = math.sqrt(min(g.n, model.out_dim)) * float(w.max())
    else:
        raise ValueError(f"bound_gcn covers sum/average/max, not {pooling!r}")
    return BoundReport(prod * walk * epsilon, pooling, epsilon, prod, walk)


def bound_gin(model: GinModel, g: Graph, epsilon: float, pooling: str, b: float) -> BoundReport:
    """GIN certificate; ``b`` bounds the feature norm and ``L`` is the GIN depth."""
    pooling = getattr(pooling, "variant", pooling)
    if b <= 0:
        raise ValueError("feature bound B must be positive")
    prod = weight_norm_product(model)
    L = model.layers
    n = g.n
    edges = g.m
    if pooling == "max":
        term = b * L * float(g.degrees.max()) + epsilon
    elif pooling == "sum":
        term = 2 * b * L * edges + n * epsilon
    elif pooling == "average":
        term = math.sqrt(n * model.out_dim) * (2 * b * L * edges / n + epsilon)
    else:
        raise ValueError(f"bound_gin covers sum/average/max, not {pooling!r}")
    return BoundReport(prod * term, pooling, epsilon, prod, term, details={"B": b})


def bound_rs_pool(model: GcnModel, g: Graph, epsilon: float, tau: float, h=None) -> BoundReport:
    """Spectral-gap certificate, reported both raw and clamped at ``2 tau``.

    ``h`` is the clean node-embedding matrix; it is computed from ``model`` when
    omitted. A gap below ``1e-9 * sigma1`` gives an infinite raw bound.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if h is None:
        h = gcn_forward(model, g)
    info = svd_oracle(h)
    w = walk_weights(g, model.layers)
    prod = weight_norm_product(model)
    walk = float(np.sum(w * w))
    gap = info.gap
    degenerate = gap <= GAP_RTOL * info.sigma1
    if degenerate:
        raw = math.inf
    else:
        raw = tau * math.sqrt(2) * epsilon / gap * prod * walk
    gamma = min(raw, 2 * tau)
    return BoundReport(
        gamma,
        "rs_pool",
        epsilon,
        prod,
        walk,
        spectral_gap=gap,
        tau=tau,
        gamma_unclamped=raw,
        clamped_by_2tau=raw > 2 * tau,
        degenerate_gap=degenerate,
        details={"sigma1": info.sigma1, "sigma2": info.sigma2},
    )


def sphere_sample(rng: np.random.Generator, shape, radius: float) -> np.ndarray:
    """Uniform draw from the Frobenius sphere of the given radius."""
    z = rng.standard_normal(shape)
    nrm = np.linalg.norm(z)
    return z * (radius / nrm) if nrm > 0 else z


def empirical_risk(
    clf: GraphClassifier,
    g: Graph,
    epsilon: float,
    n_samples: int,
    seed: int = 0,
    pooling: PoolingKind | None = None,
    return_samples: bool = False,
):
    """Monte-Carlo mean of ``||pool(H(X)) - pool(H(X + D))||`` with ``||D||_F = epsilon``.

    Sample ``i`` uses the generator seeded by ``(seed, i)``, so the draw does not
    depend on how many samples are requested.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    kind = pooling or clf.pooling
    op = clf.model.operator(g.adjacency)
    params = clf.bind(None)[: len(clf.model.arrays())]
    clean = pool(clf.model.embed(op, Tensor(g.features), params), kind).data
    dists = np.empty(n_samples)
    for i in range(n_samples):
        if epsilon == 0:
            dists[i] = 0.0
            continue
        rng = np.random.default_rng([seed, i])
        x = g.features + sphere_sample(rng, g.features.shape, epsilon)
        pert = pool(clf.model.embed(op, Tensor(x), params), kind).data
        dists[i] = float(np.linalg.norm(clean - pert))
    mean = float(dists.mean())
    return (mean, dists) if return_samples else mean

