#!/usr/bin/env python3
"""Tour of the autodiff engine: first-order gradients, then the second-order
machinery that powers the critic's gradient penalty.

Run:  python demos/01_autodiff_and_penalty.py
"""
import numpy as np

from wassda.tensor import Tensor, grad, l2norm, matmul, relu, tmean, tsum

print("=== first-order gradients ===")
x = Tensor(3.0, requires_grad=True)
(g,) = grad(x * x, [x])
print(f"d(x^2)/dx at x=3           -> {g.item():g}   (expect 6)")

v = Tensor(np.arange(5.0), requires_grad=True)
(g,) = grad(tmean(v), [v])
print(f"d(mean(v))/dv for len-5 v  -> {g.data}   (expect 0.2 everywhere)")

# a small relu network, checked against central finite differences
rng = np.random.default_rng(0)
w1 = Tensor(rng.normal(size=(4, 8)), requires_grad=True)
w2 = Tensor(rng.normal(size=(8, 1)), requires_grad=True)
batch = Tensor(rng.normal(size=(16, 4)))

def loss_of(w1_data):
    h = np.maximum(batch.data @ w1_data, 0.0)
    return float(np.mean(h @ w2.data))

loss = tmean(matmul(relu(matmul(batch, w1)), w2))
(g1, _) = grad(loss, [w1, w2])
step = 1e-5
probe = (2, 3)
w1p = w1.data.copy(); w1p[probe] += step
w1m = w1.data.copy(); w1m[probe] -= step
fd = (loss_of(w1p) - loss_of(w1m)) / (2 * step)
print(f"relu-net dloss/dw1[{probe}]  -> analytic {g1.data[probe]:+.8f}, "
      f"finite-diff {fd:+.8f}")

print()
print("=== second order: differentiate through a gradient ===")
# y = x^3; the derivative of (dy/dx)^2 is 36 x^3
x = Tensor(1.0, requires_grad=True)
(dy,) = grad(x ** 3.0, [x], create_graph=True)
(ddy,) = grad(dy * dy, [x])
print(f"d/dx[(d(x^3)/dx)^2] at x=1 -> {ddy.item():g}   (expect 36)")

# the same machinery drives the critic's penalty: per-sample input-gradient
# norms are pushed toward 1, and that scalar is differentiated w.r.t. the
# critic weights.
u = Tensor(np.array([[0.6], [0.8]]), requires_grad=True)  # unit-norm linear map
h = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
(gh,) = grad(tsum(matmul(h, u)), [h], create_graph=True)
penalty = tmean((l2norm(gh, axis=1) - 1.0) ** 2.0)
(gu,) = grad(penalty, [u])
print(f"unit-norm linear critic    -> penalty {penalty.item():.2e}, "
      f"|dpenalty/du| {np.abs(gu.data).max():.2e}   (both expect ~0)")

u3 = Tensor(np.array([[3.0], [0.0]]), requires_grad=True)  # norm-3 map
(gh,) = grad(tsum(matmul(h, u3)), [h], create_graph=True)
penalty = tmean((l2norm(gh, axis=1) - 1.0) ** 2.0)
print(f"norm-3 linear critic       -> penalty {penalty.item():g}   (expect (3-1)^2 = 4)")
