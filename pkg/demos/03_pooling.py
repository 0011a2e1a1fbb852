"""
Singular-vector pooling
=======================

The readout is ``tau * v1(H)``; ``v1`` comes from a few power-iteration steps.
"""

# %%
import numpy as np

from singular_pool.pooling import PoolingKind, pool, power_iteration, rs_pool, svd_oracle
from singular_pool.tensor import Tensor

rng = np.random.default_rng(3)
h = rng.standard_normal((7, 4))
info = svd_oracle(h)
print(f"sigma1 {info.sigma1:.4f}  sigma2 {info.sigma2:.4f}  ratio {info.ratio:.3f}")

# %%
# Error against the Jacobi reference shrinks roughly like ratio^(2K).
for k in (1, 2, 3, 5, 10):
    v, _ = power_iteration(Tensor(h), k)
    v = v.data[:, 0]
    dist = min(np.linalg.norm(v - info.v1), np.linalg.norm(v + info.v1))
    print(f"K={k:>2}  distance {dist:.2e}  ratio^(2K) {info.ratio ** (2 * k):.2e}")

# %%
# Relabelling nodes permutes rows of H, which leaves every readout unchanged.
perm = rng.permutation(7)
for kind in (PoolingKind("sum"), PoolingKind("max"), PoolingKind.rs(2, tau=1.0)):
    a = pool(Tensor(h), kind).data
    b = pool(Tensor(h[perm]), kind).data
    print(f"{str(kind):<20} max change under permutation {np.abs(a - b).max():.1e}")

# %%
# Output norm is tau, so two graphs never land more than 2 tau apart.
kind = PoolingKind.rs(2, tau=0.5)
far = rs_pool(Tensor(100 * rng.standard_normal((3, 4))), kind).data
print("norm", np.linalg.norm(far), "distance to pooled h", np.linalg.norm(far - rs_pool(Tensor(h), kind).data))
