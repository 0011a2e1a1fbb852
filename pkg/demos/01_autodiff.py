"""
Reverse-mode gradients on an explicit tape
==========================================

Every forward pass records onto its own ``Tape``; ``backward`` walks it once.
"""

# %%
import numpy as np

from singular_pool import tensor as T
from singular_pool.tensor import Tape, Tensor, backward, grad_check

tape = Tape()
w = tape.watch([[1.0, -2.0], [0.5, 3.0]])
x = Tensor([[1.0], [2.0]])
loss = T.total_sum(T.relu(T.matmul(w, x)))
backward(loss)
print("loss", loss.item())
print("dloss/dw\n", w.grad)

# %%
# A tape is consumed by backward. A second call raises instead of silently
# double-counting.
try:
    backward(loss)
except T.ContractError as exc:
    print("second backward:", exc)

# %%
# Central differences give an independent check of any scalar function.
rng = np.random.default_rng(0)
b = rng.standard_normal((4, 3))
err = grad_check(lambda a: T.total_sum(T.normalize(T.matmul(a, Tensor(b)))), rng.standard_normal((5, 4)))
print(f"max relative error vs finite differences: {err:.2e}")
