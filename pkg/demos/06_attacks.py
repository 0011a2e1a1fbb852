"""
Evasion attacks
===============

Random, gradient-greedy and genetic edge flips against a briefly trained model.
"""

# %%
from singular_pool.attacks import AttackSpec, evaluate_attack
from singular_pool.data import load_tudataset, make_splits
from singular_pool.gnn import TrainConfig, train
from singular_pool.pooling import PoolingKind

from _paths import MUTAG

ds = load_tudataset(MUTAG, "MUTAG")
split = make_splits(ds, 10, seed=0)
test = [ds[i] for i in split.test_indices(0)]

for kind in (PoolingKind("average"), PoolingKind.rs(2, tau=1.0)):
    clf = train(ds, split, 0, kind, TrainConfig(epochs=20, seed=0)).classifier
    for attack in ("random", "pgd", "genetic"):
        spec = AttackSpec(attack, "structure", epsilon=0.3, seed=0, generations=5)
        s = evaluate_attack(clf, test, spec)
        print(f"{str(kind):<20} {attack:<8} clean {s.clean_accuracy:.3f}  attacked {s.attacked_accuracy:.3f}  "
              f"success {s.success_rate:.3f}")
