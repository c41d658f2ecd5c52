"""
Checking reverse-mode gradients against finite differences
===========================================================

Build a tiny two-layer network by hand from Tensor ops, backpropagate a
cross-entropy loss and compare every parameter gradient with a central
difference estimate.
"""

import numpy as np

from orckd.losses import cross_entropy
from orckd.tensor import Tensor, matmul, relu

rng = np.random.default_rng(0)
x = rng.normal(size=(5, 3))
y = np.eye(4)[rng.integers(0, 4, size=5)]
w1, b1 = rng.normal(size=(3, 8)), np.zeros(8)
w2, b2 = rng.normal(size=(8, 4)), np.zeros(4)


def loss_of(w1, b1, w2, b2):
    hidden = relu(matmul(Tensor(x), w1) + b1)
    return cross_entropy(matmul(hidden, w2) + b2, y)[1]


# analytic gradients from one backward pass
params = [Tensor(p.copy(), requires_grad=True) for p in (w1, b1, w2, b2)]
loss = loss_of(*params)
loss.backward()
print(f"loss = {loss.item():.6f}")

# numeric gradients, one coordinate at a time
step = 1e-5
for name, arr, tensor in zip(("w1", "b1", "w2", "b2"), (w1, b1, w2, b2), params):
    numeric = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        hi = loss_of(w1, b1, w2, b2).item()
        arr[idx] = orig - step
        lo = loss_of(w1, b1, w2, b2).item()
        arr[idx] = orig
        numeric[idx] = (hi - lo) / (2 * step)
    err = np.abs(tensor.grad - numeric).max() / max(np.abs(numeric).max(), 1e-12)
    print(f"{name:>3}: max relative error {err:.2e}")
