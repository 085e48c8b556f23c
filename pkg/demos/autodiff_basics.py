"""
A tiny reverse-mode autodiff
============================

Every operation records how to push gradients back to its inputs.
``backward`` walks the graph once from the output.
"""

import numpy as np

from topomil import autodiff as ad
from topomil.autodiff import Node, Parameter

w = Parameter(np.array([[0.5, -1.0], [2.0, 0.3]]), "w")
x = Node(np.array([[1.0, 2.0]]))
loss = ad.reduce_sum(ad.square(ad.tanh(x @ w)))
loss.backward()
print("loss", loss.item())
print("dloss/dw\n", w.grad)

###############################################################################
# Compare with central differences.

def f(a):
    return float(np.sum(np.tanh(x.data @ a) ** 2))

h, numeric = 1e-6, np.zeros_like(w.data)
for idx in np.ndindex(w.shape):
    e = np.zeros_like(w.data)
    e[idx] = h
    numeric[idx] = (f(w.data + e) - f(w.data - e)) / (2 * h)
print("max abs difference", np.abs(numeric - w.grad).max())
