"""
Verifying the hand-written backward pass
========================================

The network's gradients are derived and coded by hand, so they are checked
against an independent oracle: central finite differences of the loss over
every single parameter. A gradient component passes when

    |analytic - numeric| <= 1e-7 + 1e-4 * |numeric|

The demo checks a few random small networks, then corrupts the analytic
gradients with a sign flip to show the check actually has teeth.
"""

import numpy as np

from replay_lab.mlp import (Mlp, finite_difference_grads, gradient_check,
                            softmax_cross_entropy)

rng = np.random.default_rng(0)
for trial in range(5):
    dims = [int(rng.integers(3, 9)) for _ in range(int(rng.integers(2, 5)))]
    model = Mlp(dims, rng)
    for b in model.biases:  # keep pre-activations off the ReLU kink
        b[:] = rng.uniform(0.05, 0.2, size=b.shape)
    x = rng.uniform(size=(4, dims[0]))
    y = rng.integers(0, dims[-1], size=4)
    ok, worst = gradient_check(model, x, y)
    print(f"net {dims}: {'pass' if ok else 'FAIL'} "
          f"(worst residual ratio {worst:.2e}, {model.num_params()} parameters)")

# now break the gradients on purpose
model = Mlp([5, 6, 4], np.random.default_rng(1))
x = np.random.default_rng(2).uniform(size=(4, 5))
y = np.random.default_rng(3).integers(0, 4, size=4)
model.zero_grads()
logits, cache = model.forward(x)
_, _, dlogits = softmax_cross_entropy(logits, y)
model.backward(cache, dlogits)
corrupted = -model.flat_grads()
numeric = finite_difference_grads(model, x, y)
tol = 1e-7 + 1e-4 * np.abs(numeric)
n_bad = int(np.sum(np.abs(corrupted - numeric) > tol))
print(f"\nsign-flipped gradients: {n_bad}/{corrupted.size} components rejected "
      "(a correct backward rejects zero)")
