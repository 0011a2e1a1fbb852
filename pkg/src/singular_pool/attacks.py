"""Evasion attacks on graph classifiers: random, gradient-greedy (PGD), genetic.

Structure attacks flip undirected node pairs; the budget is ``floor(eps * m)``
flips where ``m`` is the clean edge count. Feature attacks move ``X`` inside a
Frobenius ball of radius ``eps``. All attacks maximise the cross-entropy of the
true label; random and genetic searches only query losses, PGD reads
gradients.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .bounds import sphere_sample
from .data import Graph
from .gnn import GraphClassifier
from .tensor import Tape, Tensor

__all__ = [
    "AttackSpec",
    "AttackResult",
    "edge_budget",
    "apply_flips",
    "random_attack",
    "pgd_attack",
    "genetic_attack",
    "run_attack",
    "evaluate_attack",
]


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "random"
    target: str = "structure"
    epsilon: float = 0.3
    seed: int = 0
    candidates: int = 20
    steps: int = 10
    step_size: float | None = None
    shortlist: int = 8
    population: int = 20
    generations: int = 10
    mutation_rate: float = 0.1
    elite_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("random", "pgd", "genetic"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.target not in ("structure", "features"):
            raise ValueError(f"unknown attack target {self.target!r}")
        if self.kind == "genetic" and self.target != "structure":
            raise ValueError("the genetic attack searches over edge flips only")
        if self.target == "structure" and not 0 <= self.epsilon <= 1:
            raise ValueError("structure budget must lie in [0, 1]")
        if self.target == "features" and self.epsilon < 0:
            raise ValueError("feature budget must be non-negative")
        counts = (self.candidates, self.steps, self.shortlist, self.population)
        if min(counts) < 1 or self.generations < 0:
            raise ValueError("attack counts must be >= 1")
        if not 0 <= self.mutation_rate <= 1 or not 0 <= self.elite_fraction <= 1:
            raise ValueError("rates must lie in [0, 1]")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class AttackResult:
    graph: Graph
    clean_prediction: int
    attacked_prediction: int
    label: int
    clean_loss: float
    attacked_loss: float
    edits: list[tuple[int, int]] = field(default_factory=list)
    feature_delta_norm: float = 0.0
    loss_trace: list[float] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.clean_prediction == self.label and self.attacked_prediction != self.label

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "clean_prediction": self.clean_prediction,
            "attacked_prediction": self.attacked_prediction,
            "success": self.success,
            "clean_loss": self.clean_loss,
            "attacked_loss": self.attacked_loss,
            "edits": [list(map(int, e)) for e in self.edits],
            "feature_delta_norm": self.feature_delta_norm,
            "loss_trace": self.loss_trace,
            "flags": self.flags,
        }


def edge_budget(g: Graph, epsilon: float) -> int:
    # the small slack keeps e.g. 0.3 * 10 from rounding down to 2
    return int(math.floor(epsilon * g.m + 1e-9))


def apply_flips(adj: np.ndarray, flips: Sequence[tuple[int, int]]) -> np.ndarray:
    a = np.array(adj, dtype=np.float64)
    for i, j in flips:
        a[i, j] = a[j, i] = 1.0 - a[i, j]
    return a


def _loss(clf: GraphClassifier, adj, x, label: int) -> tuple[float, int]:
    logits = clf.logits(adj, x).data[0]
    return float(T.softmax_cross_entropy(Tensor(logits), label).item()), int(np.argmax(logits))


def _sample_flips(rng: np.random.Generator, n: int, budget: int) -> list[tuple[int, int]]:
    iu, ju = np.triu_indices(n, 1)
    pick = rng.choice(iu.size, size=min(budget, iu.size), replace=False)
    return [(int(iu[p]), int(ju[p])) for p in np.sort(pick)]


def _result(clf, g, adj, x, edits, trace, flags) -> AttackResult:
    clean_loss, clean_pred = _loss(clf, g.adjacency, g.features, g.label)
    att_loss, att_pred = _loss(clf, adj, x, g.label)
    graph = g.replace(adjacency=adj, features=x)
    return AttackResult(
        graph,
        clean_pred,
        att_pred,
        g.label,
        clean_loss,
        att_loss,
        edits=list(edits),
        feature_delta_norm=float(np.linalg.norm(x - g.features)),
        loss_trace=trace,
        flags=flags,
    )


def _map(fn, items, workers: int | None):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


# --- random --------------------------------------------------------------------------------


def _random_candidate(g: Graph, spec: AttackSpec, i: int):
    rng = np.random.default_rng([spec.seed, i])
    if spec.target == "structure":
        flips = _sample_flips(rng, g.n, edge_budget(g, spec.epsilon))
        return apply_flips(g.adjacency, flips), g.features, flips
    return g.adjacency, g.features + sphere_sample(rng, g.features.shape, spec.epsilon), []


def random_attack(clf: GraphClassifier, g: Graph, spec: AttackSpec, workers: int | None = None) -> AttackResult:
    """Worst of ``spec.candidates`` random perturbations by true-label loss.

    Candidate ``i`` is drawn from the generator seeded by ``(seed, i)``, so
    the first ``K`` candidates are the same for any larger ``K``.
    """
    if spec.target == "structure" and edge_budget(g, spec.epsilon) == 0:
        return _result(clf, g, g.adjacency, g.features, [], [], ["empty budget"])
    if spec.target == "features" and spec.epsilon == 0:
        return _result(clf, g, g.adjacency, g.features, [], [], ["empty budget"])

    def score(i):
        adj, x, flips = _random_candidate(g, spec, i)
        return _loss(clf, adj, x, g.label)[0], (adj, x, flips)

    scored = _map(score, range(spec.candidates), workers)
    trace = [s for s, _ in scored]
    best = int(np.argmax(trace))
    adj, x, flips = scored[best][1]
    return _result(clf, g, adj, x, flips, trace, [])


# --- gradient-greedy / PGD -------------------------------------------------------------------


def _grad(clf: GraphClassifier, adj: np.ndarray, x: np.ndarray, label: int, wrt: str):
    tape = Tape()
    a = tape.watch(adj) if wrt == "structure" else Tensor(adj)
    xt = tape.watch(x) if wrt == "features" else Tensor(x)
    loss = clf.loss(a, xt, label)
    if not loss.requires_grad:
        return loss.item(), np.zeros_like(adj if wrt == "structure" else x)
    T.backward(loss)
    return loss.item(), (a.grad if wrt == "structure" else xt.grad).copy()


def pgd_attack(clf: GraphClassifier, g: Graph, spec: AttackSpec) -> AttackResult:
    """White-box gradient attack.

    Structure: the adjacency is treated as a real tensor. Each round scores
    every node pair by the first-order loss change of flipping it (``G_ij +
    G_ji`` signed by the flip direction), evaluates the exact loss for the
    ``shortlist`` best-scored pairs and applies the best one if it raises the
    loss. Rounds repeat, with a fresh gradient, until the budget is spent or no
    shortlisted flip helps.

    Features: ``steps`` normalised-gradient ascent steps of size
    ``step_size`` (default ``eps / steps``), each followed by projection onto
    the Frobenius ball of radius ``eps`` around the clean features.
    """
    if spec.target == "features":
        return _pgd_features(clf, g, spec)
    budget = edge_budget(g, spec.epsilon)
    if budget == 0:
        return _result(clf, g, g.adjacency, g.features, [], [], ["empty budget"])
    adj = np.array(g.adjacency)
    x = g.features
    current, grad = _grad(clf, adj, x, g.label, "structure")
    trace = [current]
    flags: list[str] = []
    if not np.any(grad):
        return _result(clf, g, adj, x, [], trace, ["flat landscape"])
    edits: list[tuple[int, int]] = []
    iu, ju = np.triu_indices(g.n, 1)
    used = np.zeros(iu.size, dtype=bool)
    for _ in range(budget):
        sym = grad[iu, ju] + grad[ju, iu]
        direction = 1.0 - 2.0 * adj[iu, ju]  # +1 adds an edge, -1 removes one
        gain = np.where(used, -np.inf, sym * direction)
        order = np.argsort(-gain, kind="stable")[: spec.shortlist]
        best, best_loss = None, current
        for k in order:
            if not np.isfinite(gain[k]):
                continue
            trial = apply_flips(adj, [(iu[k], ju[k])])
            loss = _loss(clf, trial, x, g.label)[0]
            if loss > best_loss:
                best, best_loss = int(k), loss
        if best is None:
            flags.append("no improving flip")
            break
        pair = (int(iu[best]), int(ju[best]))
        adj = apply_flips(adj, [pair])
        used[best] = True
        edits.append(pair)
        current, grad = _grad(clf, adj, x, g.label, "structure")
        trace.append(current)
    return _result(clf, g, adj, x, edits, trace, flags)


def _pgd_features(clf: GraphClassifier, g: Graph, spec: AttackSpec) -> AttackResult:
    eps = spec.epsilon
    if eps == 0:
        return _result(clf, g, g.adjacency, g.features, [], [], ["empty budget"])
    eta = spec.step_size if spec.step_size is not None else eps / spec.steps
    x0 = g.features
    x = np.array(x0)
    trace = []
    flags: list[str] = []
    for step in range(spec.steps):
        loss, grad = _grad(clf, g.adjacency, x, g.label, "features")
        trace.append(loss)
        gn = np.linalg.norm(grad)
        if gn == 0:
            if step == 0:
                flags.append("flat landscape")
            break
        x = x + eta * grad / gn
        delta = x - x0
        dn = np.linalg.norm(delta)
        if dn > eps:
            x = x0 + delta * (eps / dn)
    trace.append(_loss(clf, g.adjacency, x, g.label)[0])
    return _result(clf, g, g.adjacency, x, [], trace, flags)


# --- genetic ----------------------------------------------------------------------------------


def genetic_attack(clf: GraphClassifier, g: Graph, spec: AttackSpec, workers: int | None = None) -> AttackResult:
    """Evolve sets of edge flips by true-label loss.

    The initial population reuses the random-attack candidates (same seeds).
    Each generation keeps ``round(elite_fraction * population)`` elites (at
    least one) and fills the rest with children from size-2 tournaments,
    single-point crossover of the parents' flip lists (deduplicated, truncated
    to the budget) and per-flip resampling with ``mutation_rate``. The best
    individual ever evaluated is returned.
    """
    if spec.target != "structure":
        raise ValueError("the genetic attack searches over edge flips only")
    budget = edge_budget(g, spec.epsilon)
    if budget == 0:
        return _result(clf, g, g.adjacency, g.features, [], [], ["empty budget"])
    rng = np.random.default_rng([spec.seed, 1 << 20])
    x = g.features
    iu, ju = np.triu_indices(g.n, 1)

    def fitness(ind):
        return _loss(clf, apply_flips(g.adjacency, ind), x, g.label)[0]

    pop = [_random_candidate(g, spec, i)[2] for i in range(spec.population)]
    fit = _map(fitness, pop, workers)
    best_i = int(np.argmax(fit))
    best, best_fit = list(pop[best_i]), fit[best_i]
    trace = [best_fit]
    n_elite = min(spec.population, max(1, int(round(spec.elite_fraction * spec.population))))

    def random_pair(exclude):
        while True:
            k = int(rng.integers(iu.size))
            pair = (int(iu[k]), int(ju[k]))
            if pair not in exclude or len(exclude) >= iu.size:
                return pair

    for _ in range(spec.generations):
        ranked = np.argsort(-np.asarray(fit), kind="stable")
        new_pop = [list(pop[i]) for i in ranked[:n_elite]]
        while len(new_pop) < spec.population:
            parents = []
            for _ in range(2):
                a, b = rng.integers(len(pop), size=2)
                parents.append(pop[a] if fit[a] >= fit[b] else pop[b])
            p1, p2 = parents
            cut = int(rng.integers(0, max(len(p1), len(p2)) + 1))
            child = []
            for pair in list(p1[:cut]) + list(p2[cut:]):
                if pair not in child:
                    child.append(pair)
            child = child[:budget]
            for k in range(len(child)):
                if rng.random() < spec.mutation_rate:
                    child[k] = random_pair(set(child))
            new_pop.append(child)
        pop = new_pop
        fit = _map(fitness, pop, workers)
        gi = int(np.argmax(fit))
        if fit[gi] > best_fit:
            best, best_fit = list(pop[gi]), fit[gi]
        trace.append(best_fit)
    return _result(clf, g, apply_flips(g.adjacency, best), x, best, trace, [])


# --- accounting ------------------------------------------------------------------------------


def run_attack(clf: GraphClassifier, g: Graph, spec: AttackSpec, workers: int | None = None) -> AttackResult:
    if spec.kind == "random":
        return random_attack(clf, g, spec, workers)
    if spec.kind == "pgd":
        return pgd_attack(clf, g, spec)
    return genetic_attack(clf, g, spec, workers)


@dataclass
class AttackSummary:
    clean_accuracy: float
    attacked_accuracy: float
    success_rate: float
    results: list[AttackResult]


def evaluate_attack(clf: GraphClassifier, graphs: Sequence[Graph], spec: AttackSpec, workers: int | None = None) -> AttackSummary:
    """Attacked accuracy and success rate (flips among initially-correct graphs)."""
    graphs = list(graphs)
    if not graphs:
        raise T.ContractError("evaluate_attack needs at least one graph")
    results = [run_attack(clf, g, spec, workers) for g in graphs]
    clean_ok = [r.clean_prediction == r.label for r in results]
    att_ok = [r.attacked_prediction == r.label for r in results]
    n_ok = sum(clean_ok)
    flipped = sum(c and not a for c, a in zip(clean_ok, att_ok))
    return AttackSummary(
        clean_accuracy=n_ok / len(graphs),
        attacked_accuracy=sum(att_ok) / len(graphs),
        success_rate=flipped / n_ok if n_ok else 0.0,
        results=results,
    )
