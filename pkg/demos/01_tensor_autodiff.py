"""Tour of the tensor core: recorded graphs, masked softmax, gradient checks.

Run:  python demos/01_tensor_autodiff.py
"""

import numpy as np

from hmt.gradcheck import numeric_gradient, relative_error
from hmt.tensor import Graph, Tensor, backward, parameter

rng = np.random.default_rng(0)

# Every computation happens on a Graph, which records what it executes.
g = Graph()
x = parameter(rng.standard_normal((3, 4)))
w = parameter(rng.standard_normal((4, 2)))
out = g.matmul(x, w)
print("matmul output shape:", out.shape)

# A scalar loss propagates gradients back through the tape.
loss = g.sum_all(g.gelu(out))
backward(loss, g)
print("loss:", round(loss.item(), 4))
print("dloss/dw row 0:", np.round(w.grad[0], 4))

# The same gradient, measured by central finite differences (forward-only):
def loss_value():
    fresh = Graph(record=False)
    return fresh.sum_all(fresh.gelu(fresh.matmul(x, w))).item()

numeric = numeric_gradient(loss_value, w)
print("finite-difference agreement:", relative_error(w.grad, numeric))

# Masked softmax comes in two flavours. `exclusive` drops blocked entries
# from the normalization entirely; blocked weights are exactly zero.
logits = Tensor([[2.0, 1.0, 0.1]])
allow = np.array([[1, 0, 1]])
weights = g.softmax_rows(logits, allow=allow)
print("exclusive-mode weights:", np.round(weights.value(), 4))

# `literal` multiplies logits by the mask first, so a blocked logit sits at
# zero and still receives exp(0) mass; this is kept for algebraic
# comparison against the exclusive reading.
lit = g.softmax_rows(g.elementwise_mul(logits, Tensor(allow.astype(float))))
print("literal-mode weights:  ", np.round(lit.value(), 4))

# Column max-pooling routes gradients to the winning row (lowest index on
# ties), which keeps training deterministic.
pool_in = parameter([[1.0, 5.0], [1.0, 7.0]])
g2 = Graph()
pooled = g2.col_max_pool(pool_in)
backward(g2.sum_all(pooled), g2)
print("pooled:", pooled.value(), "gradient:\n", pool_in.grad)
