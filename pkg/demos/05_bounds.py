"""
Certificates against feature noise
==================================

Closed-form bounds for sum / average / max and the spectral-gap bound for
singular-vector pooling, next to Monte-Carlo estimates of the actual drift.
"""

# %%
import numpy as np

from singular_pool.bounds import bound_gcn, bound_rs_pool, empirical_risk, walk_weights
from singular_pool.data import load_tudataset
from singular_pool.gnn import GraphClassifier, TrainConfig
from singular_pool.pooling import PoolingKind

from _paths import MUTAG

ds = load_tudataset(MUTAG, "MUTAG")
clf = GraphClassifier.init("gcn", ds.feature_dim, ds.num_classes, PoolingKind("sum"), TrainConfig(seed=0))
eps = 0.1

print(f"{'graph':>5} {'n':>3}  {'pool':<8} {'gamma':>9} {'empirical':>10}")
for gi in (0, 5, 17):
    g = ds[gi]
    for v in ("sum", "average", "max"):
        gamma = bound_gcn(clf.model, g, eps, v).gamma
        emp = empirical_risk(clf, g, eps, n_samples=50, pooling=PoolingKind(v))
        print(f"{gi:>5} {g.n:>3}  {v:<8} {gamma:>9.4f} {emp:>10.5f}")
    rep = bound_rs_pool(clf.model, g, eps, tau=1.0)
    emp = empirical_risk(clf, g, eps, n_samples=50, pooling=PoolingKind.rs(2, tau=1.0))
    print(f"{gi:>5} {g.n:>3}  {'rs_pool':<8} {rep.gamma:>9.4f} {emp:>10.5f}   gap {rep.spectral_gap:.3f}, clamped {rep.clamped_by_2tau}")

# %%
# Walk weights are the row sums of A_hat^(L-1).
print("walk weights of graph 0:", np.round(walk_weights(ds[0], 2), 3))
