"""
Training a GCN classifier
=========================

Sum pooling against singular-vector pooling on one MUTAG fold. Epochs are cut
to 20 to keep the demo quick; the full protocol uses 100.
"""

# %%
from singular_pool.data import load_tudataset, make_splits
from singular_pool.gnn import TrainConfig, train
from singular_pool.pooling import PoolingKind

from _paths import MUTAG

ds = load_tudataset(MUTAG, "MUTAG")
split = make_splits(ds, 10, seed=0)
config = TrainConfig(epochs=20, seed=0)

for kind in (PoolingKind("sum"), PoolingKind.rs(2, tau=1.0)):
    res = train(ds, split, fold=0, pooling=kind, config=config)
    print(f"{str(kind):<20} loss {res.losses[0]:.3f} -> {res.losses[-1]:.3f}  "
          f"train acc {res.final_train_accuracy:.3f}  test acc {res.test_accuracy:.3f}")
