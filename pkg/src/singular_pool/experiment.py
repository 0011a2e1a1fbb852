"""Experiment configuration, orchestration and report generation.

A run is described by one JSON document (see :class:`ExperimentConfig`).
Each command writes JSON fragments under ``<output>/fragments``; the report
command merges fragments without recomputing anything.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .attacks import AttackSpec, evaluate_attack
from .bounds import bound_gcn, bound_gin, bound_rs_pool, empirical_risk
from .data import Dataset, SplitSpec, ValidationError, load_splits, load_tudataset, make_splits, save_splits, synth_dataset
from .gnn import GraphClassifier, TrainConfig, evaluate, load_checkpoint, save_checkpoint, train
from .pooling import PoolingKind, power_iteration, svd_oracle
from .tensor import Tensor

SCHEMA_VERSION = 1

__all__ = [
    "SCHEMA_VERSION",
    "DatasetConfig",
    "BoundsConfig",
    "ExperimentConfig",
    "ConfigError",
    "load_config",
    "load_dataset",
    "cmd_ingest",
    "cmd_train",
    "cmd_attack",
    "cmd_bounds",
    "cmd_convergence",
    "cmd_report",
]


class ConfigError(ValidationError):
    pass


def _strict(cls, doc: Any, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    directory: str | None = None
    name: str | None = None
    folds_file: str | None = None
    folds: int = 10
    split_seed: int = 0
    kind: str = "cycle-vs-path"
    n_graphs: int = 40
    n_nodes: int = 6
    seed: int = 0

    def __post_init__(self):
        if self.source not in ("tudataset", "synthetic"):
            raise ValueError(f"source must be 'tudataset' or 'synthetic', got {self.source!r}")
        if self.source == "tudataset" and (not self.directory or not self.name):
            raise ValueError("tudataset source needs 'directory' and 'name'")


@dataclass
class BoundsConfig:
    enabled: bool = True
    epsilon: float = 0.1
    n_samples: int = 20
    max_graphs: int | None = None
    tau: float = 1.0
    feature_bound: float | None = None

    def __post_init__(self):
        if self.epsilon < 0 or self.n_samples < 1 or self.tau <= 0:
            raise ValueError("bounds: epsilon >= 0, n_samples >= 1, tau > 0 required")


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    model: str = "gcn"
    layers: int = 2
    hidden: int = 32
    poolings: list[PoolingKind] = field(default_factory=lambda: [PoolingKind("sum")])
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackSpec | None = None
    bounds: BoundsConfig = field(default_factory=BoundsConfig)
    convergence_k: list[int] = field(default_factory=lambda: list(range(1, 11)))
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    output: str = "runs/default"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.model not in ("gcn", "gin"):
            raise ConfigError(f"model must be 'gcn' or 'gin', got {self.model!r}")
        if not self.seeds:
            raise ConfigError("seeds must be a non-empty list")
        if not self.poolings:
            raise ConfigError("at least one pooling is required")
        if self.schema_version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {self.schema_version}")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)} | {"pooling"}
        unknown = sorted(set(doc) - names)
        if unknown:
            raise ConfigError(f"config: unknown field(s) {', '.join(unknown)}")
        if "schema_version" not in doc:
            raise ConfigError("config: missing schema_version")
        doc = dict(doc)
        if "dataset" not in doc:
            raise ConfigError("config: missing dataset")
        pool_docs = doc.pop("poolings", None)
        if "pooling" in doc:
            if pool_docs is not None:
                raise ConfigError("config: give either pooling or poolings, not both")
            pool_docs = [doc.pop("pooling")]
        kw = dict(doc)
        kw["dataset"] = _strict(DatasetConfig, doc["dataset"], "dataset")
        if pool_docs is not None:
            kw["poolings"] = [_strict(PoolingKind, p, f"poolings[{i}]") for i, p in enumerate(pool_docs)]
        train_doc = dict(doc.get("train") or {})
        for key in ("hidden", "layers"):
            if key in doc:
                train_doc.setdefault(key, doc[key])
        kw["train"] = _strict(TrainConfig, train_doc, "train")
        kw["hidden"] = kw["train"].hidden
        kw["layers"] = kw["train"].layers
        if doc.get("attack") is not None:
            kw["attack"] = _strict(AttackSpec, doc["attack"], "attack")
        if "bounds" in doc:
            kw["bounds"] = _strict(BoundsConfig, doc["bounds"], "bounds")
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "dataset": dataclasses.asdict(self.dataset),
            "model": self.model,
            "layers": self.layers,
            "hidden": self.hidden,
            "poolings": [p.to_dict() for p in self.poolings],
            "train": dataclasses.asdict(self.train),
            "attack": self.attack.to_dict() if self.attack else None,
            "bounds": dataclasses.asdict(self.bounds),
            "convergence_k": list(self.convergence_k),
            "seeds": list(self.seeds),
            "output": self.output,
        }

    def content_hash(self) -> str:
        """Hash of everything that determines results except seeds and output path."""
        doc = self.to_dict()
        doc.pop("seeds")
        doc.pop("output")
        doc["train"].pop("seed", None)
        blob = json.dumps(doc, sort_keys=True).encode()
        h = hashlib.sha256(blob)
        if self.dataset.source == "tudataset":
            root = Path(self.dataset.directory)
            for p in sorted(root.glob(f"{self.dataset.name}_*.txt")):
                h.update(p.name.encode())
                h.update(p.read_bytes())
        return h.hexdigest()[:16]


def load_config(path, seed_offset: int = 0, output: str | None = None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    cfg = ExperimentConfig.from_dict(doc)
    if seed_offset:
        cfg.seeds = [s + seed_offset for s in cfg.seeds]
    if output is not None:
        cfg.output = output
    if cfg.dataset.source == "tudataset" and not Path(cfg.dataset.directory).is_dir():
        raise ConfigError(f"dataset directory {cfg.dataset.directory} does not exist")
    if cfg.dataset.folds_file and not Path(cfg.dataset.folds_file).is_file():
        raise ConfigError(f"folds file {cfg.dataset.folds_file} does not exist")
    return cfg


# --- helpers --------------------------------------------------------------------------------------


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("SP_THREADS", "1")))
    except ValueError:
        return 1


def load_dataset(cfg: ExperimentConfig) -> tuple[Dataset, SplitSpec]:
    d = cfg.dataset
    if d.source == "tudataset":
        ds = load_tudataset(d.directory, d.name)
    else:
        ds = synth_dataset(d.kind, d.n_graphs, d.n_nodes, d.seed)
    if d.folds_file:
        split = load_splits(d.folds_file, len(ds))
    else:
        split = make_splits(ds, min(d.folds, len(ds)), d.split_seed)
    return ds, split


def _pool_tag(p) -> str:
    return str(p).replace("(", "-").replace(")", "").replace(",", "-").replace("=", "")


def _unit_fold(seed: int, split: SplitSpec) -> int:
    return seed % split.folds


def _train_config(cfg: ExperimentConfig, seed: int) -> TrainConfig:
    return dataclasses.replace(cfg.train, seed=seed)


def _fragment(cfg: ExperimentConfig, command: str, pooling: PoolingKind | None, seed: int | None, payload: dict) -> dict:
    return {
        "command": command,
        "config_hash": cfg.content_hash(),
        "config": cfg.to_dict(),
        "pooling": str(pooling) if pooling is not None else None,
        "seed": seed,
        "version": __version__,
        **payload,
    }


def _write_fragment(cfg: ExperimentConfig, frag: dict) -> Path:
    pool = frag["pooling"] or "all"
    seed = frag["seed"]
    name = f"{frag['command']}__{_pool_tag(pool)}__seed{seed}.json"
    path = Path(cfg.output) / "fragments" / name
    _atomic_write(path, json.dumps(frag, indent=1, sort_keys=True))
    return path


def _checkpoint_path(cfg: ExperimentConfig, pooling: PoolingKind, seed: int) -> Path:
    return Path(cfg.output) / "checkpoints" / f"{_pool_tag(pooling)}__seed{seed}.json"


def _run_units(fn, units):
    workers = _workers()
    if workers > 1 and len(units) > 1:
        with ProcessPoolExecutor(workers) as ex:
            return list(ex.map(fn, units))
    return [fn(u) for u in units]


# --- commands -----------------------------------------------------------------------------------------


def cmd_ingest(cfg: ExperimentConfig) -> dict:
    """Load the dataset, persist its folds and return summary statistics."""
    t0 = time.perf_counter()
    ds, split = load_dataset(cfg)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    save_splits(split, out / "folds.json")
    counts = np.bincount(ds.labels, minlength=ds.num_classes)
    summary = {
        "name": ds.name,
        "graphs": len(ds),
        "classes": ds.num_classes,
        "class_counts": counts.tolist(),
        "feature_dim": ds.feature_dim,
        "mean_nodes": float(np.mean([g.n for g in ds])),
        "mean_edges": float(np.mean([g.m for g in ds])),
        "featurization": ds.meta.get("featurization"),
        "feature_norm_bound": ds.feature_norm_bound(),
        "folds": split.folds,
    }
    frag = _fragment(cfg, "ingest", None, None, {"summary": summary, "timings": {"ingest": time.perf_counter() - t0}})
    _write_fragment(cfg, frag)
    return summary


def _train_unit(args) -> dict:
    cfg, pooling, seed = args
    ds, split = load_dataset(cfg)
    fold = _unit_fold(seed, split)
    t0 = time.perf_counter()
    res = train(ds, split, fold, pooling, _train_config(cfg, seed), model=cfg.model)
    elapsed = time.perf_counter() - t0
    ckpt = _checkpoint_path(cfg, pooling, seed)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(res.classifier, ckpt, _train_config(cfg, seed), {"fold": fold})
    payload = {
        "fold": fold,
        "clean_accuracy": res.test_accuracy,
        "train_accuracy": res.final_train_accuracy,
        "loss_curve": res.losses,
        "timings": {"train": elapsed},
    }
    frag = _fragment(cfg, "train", pooling, seed, payload)
    _write_fragment(cfg, frag)
    return frag


def cmd_train(cfg: ExperimentConfig) -> list[dict]:
    units = [(cfg, p, s) for p in cfg.poolings for s in cfg.seeds]
    return _run_units(_train_unit, units)


def _ensure_checkpoint(cfg, pooling, seed) -> GraphClassifier:
    path = _checkpoint_path(cfg, pooling, seed)
    if not path.exists():
        _train_unit((cfg, pooling, seed))
    clf, _ = load_checkpoint(path)
    return clf


def _attack_unit(args) -> dict:
    cfg, pooling, seed = args
    ds, split = load_dataset(cfg)
    fold = _unit_fold(seed, split)
    clf = _ensure_checkpoint(cfg, pooling, seed)
    test = [ds.graphs[i] for i in split.test_indices(fold)]
    spec = dataclasses.replace(cfg.attack, seed=cfg.attack.seed + seed)
    t0 = time.perf_counter()
    summary = evaluate_attack(clf, test, spec)
    elapsed = time.perf_counter() - t0
    payload = {
        "fold": fold,
        "attack": cfg.attack.to_dict(),
        "clean_accuracy": summary.clean_accuracy,
        "attacked_accuracy": summary.attacked_accuracy,
        "success_rate": summary.success_rate,
        "results": [r.to_dict() for r in summary.results],
        "timings": {"attack": elapsed},
    }
    frag = _fragment(cfg, f"attack-{cfg.attack.kind}-{cfg.attack.target}", pooling, seed, payload)
    _write_fragment(cfg, frag)
    return frag


def cmd_attack(cfg: ExperimentConfig) -> list[dict]:
    if cfg.attack is None:
        raise ConfigError("attack command needs an 'attack' section")
    units = [(cfg, p, s) for p in cfg.poolings for s in cfg.seeds]
    return _run_units(_attack_unit, units)


BOUND_COLUMNS = [
    "pooling_model",
    "seed",
    "graph",
    "n",
    "m",
    "gamma_sum",
    "gamma_average",
    "gamma_max",
    "gamma_rs_pool",
    "gamma_rs_pool_unclamped",
    "spectral_gap",
    "empirical_sum",
    "empirical_average",
    "empirical_max",
    "empirical_rs_pool",
]


def _bounds_unit(args) -> dict:
    cfg, pooling, seed = args
    ds, split = load_dataset(cfg)
    fold = _unit_fold(seed, split)
    clf = _ensure_checkpoint(cfg, pooling, seed)
    b = cfg.bounds
    idx = split.test_indices(fold)
    if b.max_graphs is not None:
        idx = idx[: b.max_graphs]
    rs_kind = pooling if pooling.variant == "rs_pool" else PoolingKind.rs(2, tau=b.tau)
    feature_bound = b.feature_bound or ds.feature_norm_bound()
    rows = []
    t0 = time.perf_counter()
    for gi in idx:
        g = ds.graphs[gi]
        h = clf.embed(g.adjacency, g.features).data
        row: dict[str, Any] = {"pooling_model": str(pooling), "seed": seed, "graph": int(gi), "n": g.n, "m": g.m}
        for v in ("sum", "average", "max"):
            if cfg.model == "gcn":
                rep = bound_gcn(clf.model, g, b.epsilon, v)
            else:
                rep = bound_gin(clf.model, g, b.epsilon, v, feature_bound)
            row[f"gamma_{v}"] = rep.gamma
            row[f"empirical_{v}"] = empirical_risk(clf, g, b.epsilon, b.n_samples, seed, PoolingKind(v))
        tau = rs_kind.tau if rs_kind.tau is not None else svd_oracle(h).sigma1 / rs_kind.alpha
        if cfg.model == "gcn" and np.any(h):
            rep = bound_rs_pool(clf.model, g, b.epsilon, tau, h)
            row["gamma_rs_pool"] = rep.gamma
            row["gamma_rs_pool_unclamped"] = rep.gamma_unclamped
            row["spectral_gap"] = rep.spectral_gap
        else:
            row["gamma_rs_pool"] = 2 * tau
            row["gamma_rs_pool_unclamped"] = float("nan")
            row["spectral_gap"] = svd_oracle(h).gap if np.any(h) else 0.0
        row["empirical_rs_pool"] = empirical_risk(clf, g, b.epsilon, b.n_samples, seed, rs_kind) if np.any(h) else 0.0
        rows.append(row)
    elapsed = time.perf_counter() - t0
    means = {}
    for c in BOUND_COLUMNS[5:]:
        vals = np.array([r[c] for r in rows], dtype=float)
        vals = vals[np.isfinite(vals)]
        means[c] = float(vals.mean()) if vals.size else None
    frag = _fragment(cfg, "bounds", pooling, seed, {"fold": fold, "rows": rows, "means": means, "timings": {"bounds": elapsed}})
    _write_fragment(cfg, frag)
    return frag


def cmd_bounds(cfg: ExperimentConfig) -> str:
    """Per-graph certificates and empirical drifts; returns the CSV text."""
    units = [(cfg, p, s) for p in cfg.poolings for s in cfg.seeds]
    frags = _run_units(_bounds_unit, units)
    buf = io.StringIO()
    w = csv.DictWriter(buf, BOUND_COLUMNS, lineterminator="\n")
    w.writeheader()
    for f in frags:
        for r in f["rows"]:
            w.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in r.items()})
    text = buf.getvalue()
    _atomic_write(Path(cfg.output) / "bounds.csv", text)
    return text


def convergence_distances(h: np.ndarray, k_values, seed: int = 0) -> dict[int, float]:
    """l2 distance between the K-step power vector and the oracle ``v1``, up to sign.

    Taking the nearer of ``v`` and ``-v`` keeps the distance a monotone function
    of the angle even when ``v1`` has a near-zero leading entry.
    """
    ref = svd_oracle(h).v1
    out = {}
    for k in k_values:
        v, _ = power_iteration(Tensor(h), k, seed)
        v = v.data[:, 0]
        out[k] = float(min(np.linalg.norm(v - ref), np.linalg.norm(v + ref)))
    return out


def _convergence_unit(args) -> dict:
    cfg, pooling, seed = args
    ds, split = load_dataset(cfg)
    fold = _unit_fold(seed, split)
    clf = _ensure_checkpoint(cfg, pooling, seed)
    test = [ds.graphs[i] for i in split.test_indices(fold)]
    rows = []
    t0 = time.perf_counter()
    for g in test:
        h = clf.embed(g.adjacency, g.features).data
        if not np.any(h):
            continue
        info = svd_oracle(h)
        for k, dist in convergence_distances(h, cfg.convergence_k, pooling.seed).items():
            rows.append({"seed": seed, "graph": g.id, "k": k, "distance": dist, "ratio": info.ratio})
    accuracy = {}
    if pooling.variant == "rs_pool":
        for k in cfg.convergence_k:
            variant = GraphClassifier(clf.model, clf.head, dataclasses.replace(pooling, k=k))
            accuracy[k] = evaluate(variant, test)
    frag = _fragment(
        cfg,
        "convergence",
        pooling,
        seed,
        {"fold": fold, "rows": rows, "accuracy_by_k": accuracy, "timings": {"convergence": time.perf_counter() - t0}},
    )
    _write_fragment(cfg, frag)
    return frag


def cmd_convergence(cfg: ExperimentConfig) -> str:
    units = [(cfg, p, s) for p in cfg.poolings for s in cfg.seeds]
    frags = _run_units(_convergence_unit, units)
    rows = [r for f in frags for r in f["rows"]]
    buf = io.StringIO()
    buf.write("k,median_distance,mean_distance,n\n")
    for k in cfg.convergence_k:
        d = [r["distance"] for r in rows if r["k"] == k]
        if d:
            buf.write(f"{k},{np.median(d):.12g},{np.mean(d):.12g},{len(d)}\n")
    text = buf.getvalue()
    _atomic_write(Path(cfg.output) / "convergence.csv", text)
    return text


# --- report -----------------------------------------------------------------------------------------------


class ReportError(ValidationError):
    pass


def _config_diff(a: dict, b: dict, prefix: str = "") -> list[str]:
    diffs = []
    for k in sorted(set(a) | set(b)):
        va, vb = a.get(k), b.get(k)
        path = f"{prefix}{k}"
        if isinstance(va, dict) and isinstance(vb, dict):
            diffs.extend(_config_diff(va, vb, path + "."))
        elif va != vb:
            diffs.append(f"{path}: {va!r} != {vb!r}")
    return diffs


def _mean_std(values) -> dict:
    arr = np.asarray([v for v in values if v is not None and not (isinstance(v, float) and np.isnan(v))], dtype=float)
    if arr.size == 0:
        return {"mean": None, "std": None, "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def cmd_report(output_dir) -> dict:
    """Merge fragments into ``summary.json`` and ``summary.csv``.

    Fragments must share one config hash; seeds from different runs of the
    same configuration are pooled. Numbers are copied from fragments only.
    """
    root = Path(output_dir)
    paths = sorted((root / "fragments").glob("*.json")) if (root / "fragments").is_dir() else []
    if not paths:
        raise ReportError(f"no run fragments under {root}")
    frags = [json.loads(p.read_text()) for p in paths]
    hashes = {f["config_hash"] for f in frags}
    if len(hashes) > 1:
        first = frags[0]
        other = next(f for f in frags if f["config_hash"] != first["config_hash"])
        a, b = dict(first["config"]), dict(other["config"])
        for d in (a, b):
            d.pop("seeds", None)
            d.pop("output", None)
        diff = _config_diff(a, b) or ["(dataset contents differ)"]
        raise ReportError("fragments come from different configurations:\n  " + "\n  ".join(diff))

    cells: dict[tuple[str, str], dict] = {}
    for f in frags:
        if f["pooling"] is None:
            continue
        key = (f["command"], f["pooling"])
        cell = cells.setdefault(key, {"seeds": []})
        cell["seeds"].append(f["seed"])
        for metric in ("clean_accuracy", "attacked_accuracy", "success_rate"):
            if metric in f:
                cell.setdefault(metric, []).append(f[metric])
        for name, t in f.get("timings", {}).items():
            cell.setdefault(f"time_{name}", []).append(t)
        for name, v in f.get("means", {}).items():
            cell.setdefault(f"mean_{name}", []).append(v)
        for k, acc in f.get("accuracy_by_k", {}).items():
            cell.setdefault(f"accuracy_k{k}", []).append(acc)

    table = []
    for (command, pooling), cell in sorted(cells.items()):
        seeds = sorted(cell.pop("seeds"))
        entry = {"command": command, "pooling": pooling, "seeds": seeds}
        for metric, values in sorted(cell.items()):
            entry[metric] = _mean_std(values)
        table.append(entry)
    summary = {"config_hash": frags[0]["config_hash"], "config": frags[0]["config"], "cells": table}
    _atomic_write(root / "summary.json", json.dumps(summary, indent=1, sort_keys=True))

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["command", "pooling", "metric", "mean", "std", "n"])
    for entry in table:
        for metric, stats in entry.items():
            if isinstance(stats, dict):
                w.writerow([entry["command"], entry["pooling"], metric, stats["mean"], stats["std"], stats["n"]])
    _atomic_write(root / "summary.csv", buf.getvalue())
    return summary
