"""
Loading graphs
==============

TUDataset directories, stratified folds and the two synthetic corpora.
"""

# %%
import numpy as np

from singular_pool.data import load_tudataset, make_splits, normalized_adjacency, synth_dataset

from _paths import MUTAG

ds = load_tudataset(MUTAG, "MUTAG")
print(f"{ds.name}: {len(ds)} graphs, {ds.num_classes} classes, features {ds.meta['featurization']} ({ds.feature_dim})")
print("class counts", np.bincount(ds.labels))
print("mean nodes", np.mean([g.n for g in ds]), "mean edges", np.mean([g.m for g in ds]))

# %%
split = make_splits(ds, folds=10, seed=0)
for f in range(3):
    test = split.test_indices(f)
    print(f"fold {f}: {test.size} test graphs, class mix {np.bincount(ds.labels[test])}")

# %%
# The GCN propagation operator of the first molecule.
g = ds[0]
a_hat = normalized_adjacency(g)
print("A_hat row sums (first 5):", np.round(a_hat.sum(axis=1)[:5], 4))

# %%
for kind in ("cycle-vs-path", "density-pair"):
    syn = synth_dataset(kind, n_graphs=20, n_nodes=8, seed=0)
    m = np.array([g.m for g in syn])
    print(kind, "mean edges by class:", [m[syn.labels == c].mean() for c in (0, 1)])
