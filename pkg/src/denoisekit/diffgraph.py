"""Tape-based reverse-mode autodiff over dense numpy arrays.

A :class:`Value` wraps an ndarray plus the provenance needed for
backprop; each op computes its forward result eagerly and registers a
vector-Jacobian product closure. Graphs are rebuilt on every forward
pass. Reductions accumulate in float64 regardless of the working dtype
so long sums stay stable in 32-bit training.

Only the CPU exists here: no fusion, no higher-order derivatives.
"""

from __future__ import annotations

import builtins

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ContractError, ShapeError

__all__ = [
    "Value", "param", "const", "backward", "grad_check",
    "add", "sub", "mul", "scalar_mul", "power", "sum", "mean", "abs",
    "l1_distance", "concat", "crop", "reshape", "conv1d", "conv2d",
    "leaky_relu", "relu", "tanh", "batch_norm", "hann_pool",
    "decimate", "linear_upsample", "linear", "cross_entropy_logits",
]


class Value:
    """Differentiable array node."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, _parents=(), _vjp=None):
        self.data = np.asarray(data)
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._vjp = _vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Value(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    # operator sugar; named functions below do the work
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def sum(self, axis=None):
        return sum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def abs(self):
        return abs(self)


def param(data, dtype=None):
    """Leaf Value that collects gradients."""
    arr = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
    return Value(arr, requires_grad=True)


def const(data, dtype=None):
    arr = np.asarray(data, dtype=dtype) if dtype else np.asarray(data)
    return Value(arr, requires_grad=False)


def _as_value(x):
    return x if isinstance(x, Value) else Value(np.asarray(x))


def _make(data, parents, vjp):
    requires = builtins.any(p.requires_grad for p in parents)
    return Value(data, requires, tuple(parents), vjp if requires else None)


def backward(loss: Value) -> None:
    """Populate .grad on every requires_grad ancestor of a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any requires_grad leaf")

    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, ready = stack.pop()
        if ready:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        for parent, g in zip(node._parents, node._vjp(node.grad)):
            if g is None or not parent.requires_grad:
                continue
            passthrough = g is node.grad
            g = np.asarray(g, dtype=parent.data.dtype).reshape(parent.data.shape)
            if parent.grad is None:
                # never alias the child's grad or a view into someone else's buffer
                parent.grad = g.copy() if (passthrough or g.base is not None) else g
            else:
                parent.grad += g  # parent.grad is always owned by us


# ---------------------------------------------------------------------------
# elementwise and reduction primitives


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _as_value(a), _as_value(b)
    out = a.data + b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, (a, b), vjp)


def sub(a, b):
    a, b = _as_value(a), _as_value(b)
    out = a.data - b.data

    def vjp(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, (a, b), vjp)


def mul(a, b):
    a, b = _as_value(a), _as_value(b)
    out = a.data * b.data

    def vjp(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _make(out, (a, b), vjp)


def scalar_mul(x, c):
    x = _as_value(x)
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def power(x, p):
    """Elementwise x**p for scalar p; fractional p requires x > 0."""
    x = _as_value(x)
    p = float(p)
    out = x.data ** p

    def vjp(g):
        return (g * p * x.data ** (p - 1.0),)

    return _make(out, (x,), vjp)


def sum(x, axis=None):
    x = _as_value(x)
    out = np.sum(x.data, axis=axis, dtype=np.float64).astype(x.data.dtype)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, x.data.shape),)
        gx = np.expand_dims(g, axis)
        return (np.broadcast_to(gx, x.data.shape),)

    return _make(out, (x,), vjp)


def mean(x, axis=None):
    x = _as_value(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return scalar_mul(sum(x, axis), 1.0 / n)


def abs(x):
    x = _as_value(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


def l1_distance(a, b):
    """mean |a - b| as a fused scalar op."""
    a, b = _as_value(a), _as_value(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"l1_distance shapes differ: {a.data.shape} vs {b.data.shape}")
    diff = a.data - b.data
    out = np.mean(np.abs(diff), dtype=np.float64).astype(a.data.dtype)
    sign = np.sign(diff) / diff.size

    def vjp(g):
        return g * sign, -g * sign

    return _make(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# structural primitives


def concat(values, axis):
    values = [_as_value(v) for v in values]
    out = np.concatenate([v.data for v in values], axis=axis)
    sizes = [v.data.shape[axis] for v in values]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tuple(values), vjp)


def crop(x, axis, start, stop):
    x = _as_value(x)
    idx = [slice(None)] * x.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = x.data[idx]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        return (gx,)

    return _make(out, (x,), vjp)


def reshape(x, shape):
    x = _as_value(x)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.data.shape),)

    return _make(out, (x,), vjp)


def decimate(x, factor=2):
    """Subsample along the last axis (no anti-alias filter)."""
    x = _as_value(x)
    factor = int(factor)
    out = x.data[..., ::factor]

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[..., ::factor] = g
        return (gx,)

    return _make(out, (x,), vjp)


def linear_upsample(x, factor=2):
    """Double the last axis by midpoint interpolation, holding the last sample."""
    x = _as_value(x)
    if int(factor) != 2:
        raise ConfigError("linear_upsample supports factor 2 only")
    d = x.data
    m = d.shape[-1]
    out = np.empty(d.shape[:-1] + (2 * m,), dtype=d.dtype)
    out[..., 0::2] = d
    out[..., 1:-1:2] = 0.5 * (d[..., :-1] + d[..., 1:])
    out[..., -1] = d[..., -1]

    def vjp(g):
        gx = g[..., 0::2].copy()
        mids = g[..., 1:-1:2]
        gx[..., :-1] += 0.5 * mids
        gx[..., 1:] += 0.5 * mids
        gx[..., -1] += g[..., -1]
        return (gx,)

    return _make(out, (x,), vjp)


# ---------------------------------------------------------------------------
# activations and normalization


def relu(x):
    x = _as_value(x)
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0).astype(x.data.dtype), (x,),
                 lambda g: (g * mask,))


def leaky_relu(x, slope=0.2):
    x = _as_value(x)
    slope = float(slope)
    mask = x.data > 0
    out = np.where(mask, x.data, slope * x.data).astype(x.data.dtype)
    return _make(out, (x,), lambda g: (np.where(mask, g, slope * g),))


def tanh(x):
    x = _as_value(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def batch_norm(x, gamma, beta, running_mean, running_var, axis=-2,
               mode="frozen", momentum=0.99, eps=1e-5, update_running=True):
    """Per-channel batch normalization.

    `axis` locates the channel dimension; statistics reduce over every
    other axis. `frozen` mode normalizes with the supplied running
    arrays (a fixed affine map, required when the net serves as a loss);
    `batch` mode uses batch statistics (biased variance) and, when
    `update_running` is set, folds them into the running arrays in place
    with the given momentum.
    """
    x, gamma, beta = _as_value(x), _as_value(gamma), _as_value(beta)
    ax = axis % x.data.ndim
    c = x.data.shape[ax]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ShapeError("batch_norm scale/shift must be shape (channels,)")
    bshape = [1] * x.data.ndim
    bshape[ax] = c
    bshape = tuple(bshape)
    red_axes = tuple(i for i in range(x.data.ndim) if i != ax)

    if mode == "frozen":
        mu = np.asarray(running_mean).reshape(bshape)
        var = np.asarray(running_var).reshape(bshape)
    elif mode == "batch":
        mu = np.mean(x.data, axis=red_axes, keepdims=True, dtype=np.float64).astype(x.data.dtype)
        var = np.var(x.data, axis=red_axes, keepdims=True, dtype=np.float64).astype(x.data.dtype)
        if update_running:
            running_mean *= momentum
            running_mean += (1.0 - momentum) * mu.reshape(c)
            running_var *= momentum
            running_var += (1.0 - momentum) * var.reshape(c)
    else:
        raise ConfigError(f"unknown batch_norm mode {mode!r}")

    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)
    n = x.data.size // c

    def vjp(g):
        dgamma = np.sum(g * xhat, axis=red_axes, dtype=np.float64).astype(gamma.data.dtype)
        dbeta = np.sum(g, axis=red_axes, dtype=np.float64).astype(beta.data.dtype)
        gs = g * gamma.data.reshape(bshape)
        if mode == "frozen":
            dx = gs * inv
        else:
            mg = np.mean(gs, axis=red_axes, keepdims=True, dtype=np.float64).astype(g.dtype)
            mgx = np.mean(gs * xhat, axis=red_axes, keepdims=True, dtype=np.float64).astype(g.dtype)
            dx = inv * (gs - mg - xhat * mgx)
        return dx, dgamma, dbeta

    return _make(out, (x, gamma, beta), vjp)


# ---------------------------------------------------------------------------
# convolutions and pooling


def _conv_spans(t, k, stride, padding):
    if padding == "valid":
        if t < k:
            raise ShapeError(f"valid conv needs input >= kernel, got {t} < {k}")
        out = (t - k) // stride + 1
        lo = hi = 0
    elif padding == "same":
        out = -(-t // stride)
        total = max(0, (out - 1) * stride + k - t)
        lo = total // 2
        hi = total - lo
    else:
        raise ConfigError(f"unknown padding {padding!r}")
    return out, lo, hi


def _lead(x, n_core):
    """Split shape into (leading batch dims, core dims); return batched view."""
    core = x.shape[-n_core:]
    lead = x.shape[:-n_core]
    return x.reshape((-1,) + core), lead


def conv1d(x, w, b=None, stride=1, padding="same"):
    """Multi-channel 1-D convolution (cross-correlation, as in deep nets).

    x: (..., C_in, T); w: (C_out, C_in, K); optional bias (C_out,).
    Evaluated as one batched GEMM per kernel tap over strided views, so
    no im2col buffer is ever materialized.
    """
    x, w = _as_value(x), _as_value(w)
    bv = _as_value(b) if b is not None else None
    if x.data.ndim < 2:
        raise ShapeError("conv1d input must be at least (C_in, T)")
    c_out, c_in, k = w.data.shape
    if x.data.shape[-2] != c_in:
        raise ShapeError(f"conv1d expects {c_in} input channels, got {x.data.shape[-2]}")
    t = x.data.shape[-1]
    out_len, lo, hi = _conv_spans(t, k, stride, padding)
    span = (out_len - 1) * stride + 1

    xb, lead = _lead(x.data, 2)
    nb = xb.shape[0]
    xp = np.pad(xb, ((0, 0), (0, 0), (lo, hi))) if lo or hi else xb
    tp = xp.shape[-1]

    w_taps = np.ascontiguousarray(w.data.transpose(2, 0, 1))  # (K, C_out, C_in), BLAS-friendly
    y = np.zeros((nb, c_out, out_len), dtype=xp.dtype)
    tmp = np.empty_like(y)
    for kk in range(k):
        np.matmul(w_taps[kk], xp[:, :, kk:kk + span:stride], out=tmp)
        y += tmp
    if bv is not None:
        y += bv.data.reshape(1, c_out, 1)
    y = y.reshape(lead + (c_out, out_len))

    def vjp(g):
        gb = g.reshape(nb, c_out, out_len)
        dx = dw = None
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for kk in range(k):
                dxp[:, :, kk:kk + span:stride] += np.matmul(w_taps[kk].T, gb)
            dx = (dxp[:, :, lo:tp - hi] if lo or hi else dxp).reshape(x.data.shape)
        if w.requires_grad:
            dwt = np.empty((k, c_out, c_in), dtype=w.data.dtype)
            for kk in range(k):
                sl = xp[:, :, kk:kk + span:stride]
                np.matmul(gb, sl.transpose(0, 2, 1)).sum(axis=0, out=dwt[kk])
            dw = np.ascontiguousarray(dwt.transpose(1, 2, 0))
        db = None
        if bv is not None and bv.requires_grad:
            db = np.sum(gb, axis=(0, 2), dtype=np.float64).astype(bv.data.dtype)
        return (dx, dw, db) if bv is not None else (dx, dw)

    parents = (x, w, bv) if bv is not None else (x, w)
    return _make(y, parents, vjp)


def conv2d(x, w, b=None, stride=(1, 1), padding="same"):
    """Multi-channel 2-D convolution.

    x: (..., C_in, H, W); w: (C_out, C_in, KH, KW); optional bias (C_out,).
    """
    x, w = _as_value(x), _as_value(w)
    bv = _as_value(b) if b is not None else None
    if x.data.ndim < 3:
        raise ShapeError("conv2d input must be at least (C_in, H, W)")
    c_out, c_in, kh, kw = w.data.shape
    if x.data.shape[-3] != c_in:
        raise ShapeError(f"conv2d expects {c_in} input channels, got {x.data.shape[-3]}")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    h, wd = x.data.shape[-2], x.data.shape[-1]
    oh, lo_h, hi_h = _conv_spans(h, kh, sh, padding)
    ow, lo_w, hi_w = _conv_spans(wd, kw, sw, padding)

    xb, lead = _lead(x.data, 3)
    nb = xb.shape[0]
    xp = np.pad(xb, ((0, 0), (0, 0), (lo_h, hi_h), (lo_w, hi_w)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]  # (B,C,OH,OW,KH,KW)
    win2 = win.transpose(0, 2, 3, 1, 4, 5).reshape(nb * oh * ow, c_in * kh * kw)
    wmat = w.data.reshape(c_out, c_in * kh * kw)
    y = (win2 @ wmat.T).reshape(nb, oh, ow, c_out).transpose(0, 3, 1, 2)
    if bv is not None:
        y = y + bv.data.reshape(1, c_out, 1, 1)
    y = np.ascontiguousarray(y).reshape(lead + (c_out, oh, ow))

    ph, pw = xp.shape[-2], xp.shape[-1]

    def vjp(g):
        gb = g.reshape(nb, c_out, oh, ow)
        g2 = gb.transpose(0, 2, 3, 1).reshape(nb * oh * ow, c_out)
        dx = dw = None
        if w.requires_grad:
            win_b = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
            win2_b = win_b.transpose(0, 2, 3, 1, 4, 5).reshape(nb * oh * ow, c_in * kh * kw)
            dw = (g2.T @ win2_b).reshape(c_out, c_in, kh, kw).astype(w.data.dtype)
        if x.requires_grad:
            m = (g2 @ wmat).reshape(nb, oh, ow, c_in, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            for p in range(kh):
                rows = slice(p, p + (oh - 1) * sh + 1, sh)
                for q in range(kw):
                    cols = slice(q, q + (ow - 1) * sw + 1, sw)
                    dxp[:, :, rows, cols] += m[:, :, :, :, p, q]
            dx = dxp[:, :, lo_h:ph - hi_h, lo_w:pw - hi_w].reshape(x.data.shape)
        db = None
        if bv is not None and bv.requires_grad:
            db = np.sum(gb, axis=(0, 2, 3), dtype=np.float64).astype(bv.data.dtype)
        return (dx, dw, db) if bv is not None else (dx, dw)

    parents = (x, w, bv) if bv is not None else (x, w)
    return _make(y, parents, vjp)


def hann_window(stride: int) -> np.ndarray:
    """Unit-sum Hann pooling kernel of length 2*stride + 1."""
    h = np.hanning(2 * int(stride) + 1)
    if h.sum() == 0:  # stride 0 guard
        raise ConfigError("pool stride must be >= 1")
    return h / h.sum()


def hann_pool(x, stride, axis=-1):
    """Weighted average pooling with a Hann kernel along one axis.

    Kernel length 2*stride+1, unit sum; edges renormalize by the kernel
    mass actually inside the signal so a constant input stays constant.
    """
    x = _as_value(x)
    stride = int(stride)
    if stride < 1:
        raise ConfigError("pool stride must be >= 1")
    ax = axis % x.data.ndim
    h = hann_window(stride).astype(x.data.dtype)
    k = h.size

    d = np.moveaxis(x.data, ax, -1)
    t = d.shape[-1]
    out_len, lo, hi = _conv_spans(t, k, stride, "same")
    dp = np.pad(d, [(0, 0)] * (d.ndim - 1) + [(lo, hi)])
    win = sliding_window_view(dp, k, axis=-1)[..., ::stride, :]
    # kernel mass inside the signal at each output position
    ones = np.pad(np.ones(t, dtype=x.data.dtype), (lo, hi))
    cov = sliding_window_view(ones, k)[::stride] @ h
    y = (win @ h) / cov
    y = np.moveaxis(y, -1, ax)

    def vjp(g):
        gm = np.moveaxis(g, ax, -1) / cov
        dp_grad = np.zeros_like(dp)
        for kk in range(k):
            dp_grad[..., kk:kk + (out_len - 1) * stride + 1:stride] += gm * h[kk]
        dd = dp_grad[..., lo:lo + t] if lo or hi else dp_grad
        return (np.moveaxis(dd, -1, ax),)

    return _make(y, (x,), vjp)


def linear(x, w, b=None):
    """Affine map: y = x @ w.T + b with x (..., In), w (Out, In)."""
    x, w = _as_value(x), _as_value(w)
    bv = _as_value(b) if b is not None else None
    if x.data.shape[-1] != w.data.shape[1]:
        raise ShapeError(f"linear expects {w.data.shape[1]} features, got {x.data.shape[-1]}")
    y = x.data @ w.data.T
    if bv is not None:
        y = y + bv.data

    def vjp(g):
        dx = g @ w.data
        g2 = g.reshape(-1, w.data.shape[0])
        x2 = x.data.reshape(-1, w.data.shape[1])
        dw = (g2.T @ x2).astype(w.data.dtype)
        if bv is not None:
            db = np.sum(g2, axis=0, dtype=np.float64).astype(bv.data.dtype)
            return dx, dw, db
        return dx, dw

    parents = (x, w, bv) if bv is not None else (x, w)
    return _make(y, parents, vjp)


def cross_entropy_logits(logits, labels):
    """Mean cross-entropy of integer labels against raw logits.

    logits: (n_classes,) or (B, n_classes); labels: int or (B,) ints.
    """
    logits = _as_value(logits)
    z = logits.data
    squeeze = z.ndim == 1
    if squeeze:
        z = z[None, :]
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape[0] != z.shape[0]:
        raise ShapeError("labels must match the logits batch")
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    lse = np.log(ez.sum(axis=1)) + zmax[:, 0]
    nll = lse - z[np.arange(z.shape[0]), labels]
    out = np.mean(nll, dtype=np.float64).astype(z.dtype)
    softmax = ez / ez.sum(axis=1, keepdims=True)

    def vjp(g):
        d = softmax.copy()
        d[np.arange(z.shape[0]), labels] -= 1.0
        d *= g / z.shape[0]
        return (d[0] if squeeze else d,)

    return _make(out, (logits,), vjp)


# ---------------------------------------------------------------------------
# finite-difference harness


def grad_check(f, x, h=1e-6):
    """Max relative error between backprop and central differences.

    f maps a Value to a scalar Value; x supplies the probe point
    (float64). Relative error uses denominator max(|a|, |b|, 1e-8).
    """
    base = np.array(x.data if isinstance(x, Value) else x, dtype=np.float64)
    leaf = Value(base.copy(), requires_grad=True)
    y = f(leaf)
    if y.data.size != 1:
        raise ContractError("grad_check needs a scalar-valued function")
    backward(y)
    analytic = np.zeros_like(base) if leaf.grad is None else np.array(leaf.grad, dtype=np.float64)

    numeric = np.zeros_like(base)
    flat = base.ravel()
    nflat = numeric.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Value(base.copy())).data)
        flat[i] = orig - h
        fm = float(f(Value(base.copy())).data)
        flat[i] = orig
        nflat[i] = (fp - fm) / (2.0 * h)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
