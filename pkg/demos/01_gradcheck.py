"""Check every autodiff operation against central finite differences.

Run: python demos/01_gradcheck.py
"""

import numpy as np

from gcl import autodiff as ad
from gcl.selfcheck import GRAD_TOL, gradient_report

# A tiny graph-free model first: one linear layer with a softmax loss.
rng = np.random.default_rng(0)
x = ad.constant(rng.standard_normal((5, 3)))
w = ad.parameter(rng.standard_normal((3, 4)))
labels = rng.integers(0, 4, size=5)
loss_fn = lambda: ad.masked_cross_entropy(ad.matmul(x, w), labels, np.arange(5))  # noqa: E731

ad.backward(loss_fn())
numeric = ad.numerical_gradient(loss_fn, w)
print(f"linear softmax loss: analytic vs numeric max rel err {ad.relative_error(w.grad, numeric):.2e}")

# The same comparison for every primitive, over a few random shapes.
worst = {}
for seed in range(5):
    for name, err in gradient_report(seed).items():
        worst[name] = max(worst.get(name, 0.0), err)
for name, err in sorted(worst.items(), key=lambda kv: -kv[1]):
    print(f"  {name:<22} {err:.2e}  {'ok' if err < GRAD_TOL else 'BAD'}")

# A deliberately wrong derivative is caught by the same check.
broken = gradient_report(0, corrupt="spmm")["spmm"]
print(f"spmm with its gradient scaled by 1.5: rel err {broken:.2f} (threshold {GRAD_TOL})")
