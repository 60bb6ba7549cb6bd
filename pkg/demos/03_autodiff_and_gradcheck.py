"""The reverse-mode tape in two minutes.

Composes primitives, runs backward, and cross-checks a few gradients
against central finite differences (the same harness the `gradcheck`
CLI subcommand runs at scale).
"""

import numpy as np

import denoisekit.diffgraph as dg

# forward: y = mean(tanh(conv1d(x, w) + b)); backward fills .grad
rng = np.random.default_rng(0)
x = dg.param(rng.standard_normal((2, 16)))
w = dg.param(rng.standard_normal((4, 2, 5)) * 0.4)
b = dg.param(np.zeros(4))
y = dg.mean(dg.tanh(dg.conv1d(x, w, b)))
dg.backward(y)
print("loss:", float(y.data))
print("grad shapes:", x.grad.shape, w.grad.shape, b.grad.shape)

# the same gradient, verified against finite differences
err = dg.grad_check(
    lambda v: dg.mean(dg.tanh(dg.conv1d(v, dg.const(w.data), dg.const(b.data)))),
    dg.Value(x.data))
print(f"conv+tanh vs central differences: max rel err {err:.2e}")

# gradients accumulate across shared subexpressions
a = dg.param(np.array([3.0]))
dg.backward(dg.sum(dg.add(dg.mul(a, a), a)))
print(f"d(a^2 + a)/da at a=3: {a.grad[0]} (expect 7)")

# a deliberately wrong vjp is caught immediately
def broken_tanh(v):
    out = np.tanh(v.data)
    return dg.Value(out, v.requires_grad, (v,), lambda g: (g * (1 - out * out) * 1.1,))

err = dg.grad_check(lambda v: dg.sum(broken_tanh(v)), dg.Value(rng.standard_normal(8)))
print(f"broken vjp detected with rel err {err:.1e} (threshold 1e-5)")
