"""Tape-based reverse-mode differentiation on small matrices."""

# %%
import numpy as np

from hetmoe import diffcore as dc
from hetmoe.diffcore import Tape, Value

# Every op records itself on the active tape; backward walks it in reverse.
w = Value(np.array([[0.5, -1.0], [2.0, 0.3]]), requires_grad=True)
x = np.array([[1.0, 2.0], [-1.0, 0.5], [0.0, 1.0]])

with Tape():
    logits = dc.matmul(x, w)
    loss = dc.cross_entropy(logits, labels=[0, 1, 1], rows=[0, 1, 2])
    dc.backward(loss)

print("loss", loss.item())
print("dL/dw\n", w.grad)

# %%
# Compare with central finite differences.


def f(arr):
    with Tape():
        return dc.cross_entropy(dc.matmul(x, Value(arr)), [0, 1, 1], [0, 1, 2]).item()


numeric = dc.numeric_gradient(f, w.payload)
print("relative error vs finite differences", dc.relative_error(w.grad, numeric))

# %%
# One Adam step moves w against the gradient.
state = dc.AdamState()
before = w.payload.copy()
dc.adam_step([w], lr=0.1, state=state)
print("update sign matches -grad:", np.all(np.sign(w.payload - before) == -np.sign(w.grad)))

# %%
# The full finite-difference suite (also available as `hetmoe gradcheck`).
from hetmoe.gradcheck import run_suite

for r in run_suite(instances=3):
    print(f"{r.name:<24} {r.worst_error:.1e}")
