"""
Reverse-mode gradients on numpy arrays
======================================

Every model in the package is built from a small tape-based autodiff core.
This script differentiates a tiny attention read-out and compares the tape
gradient with central differences.
"""
import numpy as np

from diffmsin.core import tensor as T
from diffmsin.core.nn import scaled_dot_attention

rng = np.random.default_rng(0)

# a query attends over four keys; values are the keys themselves
q = T.Tensor(rng.normal(size=3), requires_grad=True)
K = T.Tensor(rng.normal(size=(4, 3)), requires_grad=True)
out, weights = scaled_dot_attention(q, K, K, return_weights=True)
print("attention weights", np.round(weights.data, 4), "sum", weights.data.sum())

loss = T.tsum(out * out)
T.backward(loss)


def value():
    return float(np.sum(scaled_dot_attention(q, K, K).data ** 2))


# central differences on the query
numeric = np.zeros(3)
for i in range(3):
    old = q.data[i]
    q.data[i] = old + 1e-6
    up = value()
    q.data[i] = old - 1e-6
    down = value()
    q.data[i] = old
    numeric[i] = (up - down) / 2e-6
print("tape gradient   ", q.grad)
print("finite difference", numeric)

# one key: softmax over a single score is exactly 1, so the read-out is the value
single = scaled_dot_attention(q, K.data[:1], K.data[:1])
print("single key returns its value:", np.array_equal(single.data, K.data[0]))
