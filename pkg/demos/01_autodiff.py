"""
Reverse-mode autodiff on numpy arrays
=====================================

Operations record themselves on a tape while one is active; ``backward``
replays the tape in reverse. Central differences check the rules.
"""

# %%
import numpy as np

from tokgraph import autodiff as ad
from tokgraph.autodiff import Tensor

rng = np.random.default_rng(0)
x = Tensor(rng.normal(size=(4, 3)), requires_grad=True)
w = Tensor(rng.normal(size=(3, 2)), requires_grad=True)

with ad.Tape() as tape:
    logits = ad.gelu(x @ w)
    loss = ad.cross_entropy(logits, np.array([0, 1, 1, 0]))
tape.backward(loss, [x, w])
print("loss", loss.item())
print("dL/dw\n", w.grad)

# %%
# Finite-difference check: the largest relative error over every entry.
def f():
    return ad.cross_entropy(ad.gelu(x @ w), np.array([0, 1, 1, 0]))

print("grad check", ad.grad_check(f, [x, w]))

# %%
# A deliberately wrong rule (identity forward, negated backward) is caught.
print("sign-flipped", ad.grad_check(lambda: (ad.flip_grad(w) * w).sum(), [w]))

# %%
# LayerNorm and attention are ordinary ops on the same tape.
g, b = Tensor(np.ones(3), requires_grad=True), Tensor(np.zeros(3), requires_grad=True)
q = k = v = Tensor(rng.normal(size=(5, 3)), requires_grad=True)
print("layer norm rows", ad.layer_norm(x, g, b).data.mean(axis=-1).round(12))
print("attention rows sum to", ad.attention_weights(q, k).sum(axis=-1))
