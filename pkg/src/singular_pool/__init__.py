"""Singular-vector graph pooling with certified robustness bounds.

Submodules:

* ``tensor``: dense float64 tensors with a per-pass reverse-mode tape
* ``data``: graphs, TUDataset loading, folds and synthetic datasets
* ``gnn``: GCN / GIN message passing, readout head, training
* ``pooling``: sum / average / max readouts and power-iteration pooling
* ``bounds``: closed-form certificates and Monte-Carlo risk estimates
* ``attacks``: random, gradient and genetic evasion attacks
* ``experiment`` / ``cli``: config-driven pipeline and the ``singular-pool`` command
"""

__version__ = "0.1.0"

from .data import Dataset, Graph, SplitSpec, load_tudataset, make_splits, synth_dataset
from .gnn import GcnModel, GinModel, GraphClassifier, ReadoutHead, TrainConfig, evaluate, train
from .pooling import PoolingKind, pool, power_iteration, rs_pool, sign_normalize, svd_oracle
from .tensor import Tape, Tensor, backward

__all__ = [
    "__version__",
    "Dataset",
    "Graph",
    "SplitSpec",
    "load_tudataset",
    "make_splits",
    "synth_dataset",
    "GcnModel",
    "GinModel",
    "GraphClassifier",
    "ReadoutHead",
    "TrainConfig",
    "evaluate",
    "train",
    "PoolingKind",
    "pool",
    "power_iteration",
    "rs_pool",
    "sign_normalize",
    "svd_oracle",
    "Tape",
    "Tensor",
    "backward",
]
