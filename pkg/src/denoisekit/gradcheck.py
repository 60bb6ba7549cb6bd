"""Finite-difference verification suite for every differentiable path.

Each op gets many randomized probes in double precision; analytic
gradients must match central differences at h=1e-6. Probe inputs are
nudged away from rectifier/abs kinks (where the finite-difference
oracle itself is invalid), and cochlear probes use a compression
epsilon of 1e-3: the x^0.3 compression at the default eps=1e-8 has a
third derivative so large near zero that central differences lose more
accuracy than the tolerance allows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import diffgraph as dg
from . import enhancer as enh
from . import recognizer as rec
from .cochlea import FilterBankConfig, build_filter_bank, cochleagram_op
from .losses import LossSpec, DeepFeatureMember, compile_loss

__all__ = ["run_suite", "SuiteResult"]


@dataclass
class SuiteResult:
    name: str
    max_error: float
    n_probes: int
    seconds: float
    tolerance: float

    @property
    def passed(self):
        return self.max_error < self.tolerance


def _away_from_kinks(x, margin=1e-3):
    """Shift elements off |x| < margin so max(x,0)-style kinks stay clear of h."""
    x = np.array(x)
    x[np.abs(x) < margin] += 2 * margin
    return x


def _probe_shapes(rng):
    return tuple(int(rng.integers(2, 6)) for _ in range(int(rng.integers(1, 3))))


def _primitive_probes(rng):
    """(name, f, x0) triples; one randomized probe per call per op.

    Ops that are linear in the probed leaf get positive projections and
    kernels: every gradient entry is then a sum of positive terms,
    bounded away from the h=1e-6 cancellation noise floor of the oracle
    (the vjp math is checked just as thoroughly).
    """
    def pos(*shape):
        return rng.uniform(0.5, 1.5, shape)

    sh = _probe_shapes(rng)
    x0 = rng.standard_normal(sh)
    c = rng.standard_normal(sh)
    cpos = pos(*sh)
    proj = rng.standard_normal(sh)
    ppos = pos(*sh)

    def with_proj(node, p):
        # a positive linear anchor on the probed leaf keeps every gradient
        # entry O(1), out of the finite-difference noise floor
        leaf = node
        while leaf._parents:
            leaf = leaf._parents[0]
        anchor = np.full(leaf.data.shape, 1.3)
        return dg.add(dg.sum(dg.mul(node, dg.const(p))),
                      dg.sum(dg.mul(leaf, dg.const(anchor))))

    probes = [
        ("add", lambda v: with_proj(dg.add(v, dg.const(c)), ppos), x0),
        ("sub", lambda v: with_proj(dg.sub(dg.const(c), v), ppos), x0),
        ("mul", lambda v: with_proj(dg.mul(v, dg.const(cpos)), ppos), x0),
        ("scalar_mul", lambda v: with_proj(dg.scalar_mul(v, -1.7), ppos), x0),
        ("sum", lambda v: dg.sum(dg.mul(v, dg.const(ppos))), x0),
        ("mean", lambda v: dg.mean(dg.mul(v, dg.const(ppos))), x0),
        ("abs", lambda v: with_proj(dg.abs(v), proj), _away_from_kinks(x0)),
        ("relu", lambda v: with_proj(dg.relu(v), proj), _away_from_kinks(x0)),
        ("leaky_relu", lambda v: with_proj(dg.leaky_relu(v, 0.2), proj), _away_from_kinks(x0)),
        ("tanh", lambda v: with_proj(dg.tanh(v), proj), x0),
        ("power", lambda v: dg.sum(dg.power(v, 0.7)), np.abs(x0) + 0.5),
        ("l1_distance", lambda v: dg.l1_distance(v, dg.const(c)),
         _away_from_kinks(x0 + np.where(np.abs(x0 - c) < 1e-3, 0.1, 0.0))),
        ("reshape", lambda v: with_proj(dg.reshape(v, (-1,)), ppos.reshape(-1)), x0),
    ]

    # structural ops on 2-D inputs
    m = rng.standard_normal((3, 5))
    mc = rng.standard_normal((2, 5))
    probes += [
        ("concat", lambda v, p=pos(5, 5): with_proj(dg.concat([v, dg.const(mc)], 0), p), m),
        ("crop", lambda v: dg.sum(dg.crop(v, 1, 1, 4)), m),
        ("decimate", lambda v, p=pos(3, 3): with_proj(dg.decimate(v, 2), p), m),
        ("linear_upsample", lambda v, p=pos(3, 10): with_proj(dg.linear_upsample(v), p), m),
        ("hann_pool_t", lambda v, p=pos(3, 3): with_proj(dg.hann_pool(v, 2, axis=-1), p), m),
        ("hann_pool_f", lambda v, p=pos(1, 5): with_proj(dg.hann_pool(v, 3, axis=-2), p), m),
    ]

    # convolutions: positive kernels and projections for the same reason
    stride = int(rng.integers(1, 3))
    padding = "same" if rng.integers(2) else "valid"
    t = int(rng.integers(8, 14))
    cin, cout, k = int(rng.integers(1, 4)), int(rng.integers(1, 4)), int(rng.integers(1, 4)) * 2 - 1
    xk = pos(cin, t)
    wk = pos(cout, cin, k)
    bk = rng.standard_normal(cout)
    out_t = dg.conv1d(dg.const(xk), dg.const(wk), dg.const(bk), stride, padding).data.shape[-1]
    pj = pos(cout, out_t)
    probes += [
        ("conv1d_x", lambda v: with_proj(dg.conv1d(v, dg.const(wk), dg.const(bk), stride, padding), pj), xk),
        ("conv1d_w", lambda v: with_proj(dg.conv1d(dg.const(xk), v, dg.const(bk), stride, padding), pj), wk),
        ("conv1d_b", lambda v: with_proj(dg.conv1d(dg.const(xk), dg.const(wk), v, stride, padding), pj), bk),
    ]
    f2, t2 = int(rng.integers(4, 7)), int(rng.integers(4, 7))
    x2 = pos(cin, f2, t2)
    w2 = pos(cout, cin, 3, 3)
    s2 = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
    o2 = dg.conv2d(dg.const(x2), dg.const(w2), stride=s2, padding="same").data.shape
    pj2 = pos(*o2)
    probes += [
        ("conv2d_x", lambda v: with_proj(dg.conv2d(v, dg.const(w2), stride=s2), pj2), x2),
        ("conv2d_w", lambda v: with_proj(dg.conv2d(dg.const(x2), v, stride=s2), pj2), w2),
    ]

    # batch norm, linear, cross entropy
    xb = rng.standard_normal((4, 7))
    gm = rng.standard_normal(4) * 0.3 + 1.0
    bt = rng.standard_normal(4) * 0.2
    r_mu = rng.standard_normal(4) * 0.1
    r_var = np.abs(rng.standard_normal(4)) + 0.5
    pb = rng.standard_normal((4, 7))

    def bn(v, mode, which):
        args = dict(x=dg.const(xb), gamma=dg.const(gm), beta=dg.const(bt))
        args[which] = v
        return with_proj(dg.batch_norm(args["x"], args["gamma"], args["beta"],
                                       r_mu.copy(), r_var.copy(), axis=0, mode=mode,
                                       update_running=False), pb)

    probes += [
        ("batch_norm_frozen_x", lambda v: bn(v, "frozen", "x"), xb),
        ("batch_norm_batch_x", lambda v: bn(v, "batch", "x"), xb),
        ("batch_norm_gamma", lambda v: bn(v, "batch", "gamma"), gm),
        ("batch_norm_beta", lambda v: bn(v, "frozen", "beta"), bt),
    ]

    # linear layer: positive weights/projections again; the cross-entropy
    # probe uses a moderate logit scale so no softmax probability underflows
    wl = pos(4, 6)
    bl = rng.standard_normal(4) * 0.2
    xl = pos(6)
    labels = int(rng.integers(4))
    pv = pos(4)
    probes += [
        ("linear_x", lambda v: with_proj(dg.linear(v, dg.const(wl), dg.const(bl)), pv), xl),
        ("linear_w", lambda v: with_proj(dg.linear(dg.const(xl), v, dg.const(bl)), pv), wl),
        ("linear_b", lambda v: with_proj(dg.linear(dg.const(xl), dg.const(wl), v), pv), bl),
        ("cross_entropy", lambda v: dg.cross_entropy_logits(v, labels), rng.standard_normal(4) * 0.7),
    ]
    return probes


_PROBE_FB = dict(f_min_hz=50.0, f_max_hz=3500.0, sample_rate_hz=8000,
                 compression_epsilon=1e-3)


def _kink_distances(x, bank):
    """Distance of the pipeline's rectifier/clamp inputs from their kinks."""
    from .cochlea import _pipeline_tables
    import scipy.fft as sfft
    t = x.size
    h_resp, gain = _pipeline_tables(bank, t, np.float64)
    s = sfft.irfft(sfft.rfft(x)[None, :] * h_resp, n=t)
    r = np.where(s > 0, s, 0.0)
    if gain is not None:
        r = sfft.irfft(sfft.rfft(r, axis=1) * gain[None, :], n=t, axis=1)
    q = bank.config.sample_rate_hz // bank.config.downsample_to_hz
    r = r[:, ::q] if q > 1 else r
    return min(np.abs(s).min(), np.abs(r).min())


def _cochlea_probe(rng):
    """Random bank config and input, both conditioned for the fd oracle.

    eps=1e-2 keeps the compression's third derivative small enough for
    h=1e-6 central differences, and inputs (or, failing that, whole
    configs) are redrawn until no rectifier/clamp input sits within
    reach of +-h, where the oracle itself is invalid. The vjp code path
    is identical regardless.
    """
    margin = 5e-4
    best = None
    for _ in range(8):
        spacing = ("erb", "linear", "reversed_erb")[int(rng.integers(3))]
        envelope = "lowpass" if rng.integers(2) else "off"
        cfg = FilterBankConfig(n_filters=int(rng.integers(4, 9)), spacing=spacing,
                               downsample_to_hz=4000, envelope_mode=envelope,
                               **{**_PROBE_FB, "compression_epsilon": 1e-2})
        bank = build_filter_bank(cfg)
        t = int(rng.integers(150, 250))
        for _ in range(64):
            cand = rng.standard_normal(t) * 0.3
            d = _kink_distances(cand, bank)
            if best is None or d > best[0]:
                best = (d, cand, bank, cfg, t)
            if d > margin:
                break
        if best[0] > margin:
            break
    _, x0, bank, cfg, t = best
    frames = -(-t // 2)
    proj = rng.standard_normal((cfg.n_filters, frames))
    # a linear anchor term keeps every input's total gradient O(1): without
    # it, elements whose cochleagram gradient happens to be ~1e-6 drown in
    # the ~1e-10 absolute noise floor of the finite-difference oracle
    anchor = rng.uniform(0.5, 1.5, t)
    return (lambda v: dg.add(dg.sum(dg.mul(cochleagram_op(v, bank), dg.const(proj))),
                             dg.sum(dg.mul(v, dg.const(anchor))))), x0


def _cochlear_loss_probe(rng):
    cfg = FilterBankConfig(n_filters=int(rng.integers(4, 8)), downsample_to_hz=4000,
                           **_PROBE_FB)
    compiled = compile_loss(LossSpec(kind="cochlear", filter_bank=cfg))
    t = int(rng.integers(150, 250))
    clean = rng.uniform(-0.4, 0.4, t)
    x0 = rng.uniform(-0.4, 0.4, t)
    return lambda v: compiled.graph(v, clean), x0


def _deep_loss_probe(rng):
    # compression_exponent 1.0 keeps activations large relative to h, so
    # relu kinks and curvature stay out of the finite-difference noise floor
    fb = FilterBankConfig(n_filters=6, downsample_to_hz=4000,
                          **{**_PROBE_FB, "compression_exponent": 1.0})
    cfg = rec.RecognizerConfig(
        layers=(rec.LayerSpec(3, 3, 3, 1, 2), rec.LayerSpec(3, 3, 3, 2, 2),
                rec.LayerSpec(4, 3, 3, 1, 2), rec.LayerSpec(4, 3, 3, 2, 2)),
        n_classes=4, seed=int(rng.integers(1000)), filter_bank=fb)
    model = rec.build(cfg)
    for k in model.params:  # float64 for the harness
        model.params[k] = model.params[k].astype(np.float64)
    weights = tuple(float(w) for w in rng.uniform(0.5, 2.0, 4))
    spec = LossSpec(kind="deep_features",
                    members=(DeepFeatureMember(model=model, layer_weights=weights),))
    compiled = compile_loss(spec)
    t = int(rng.integers(150, 220))
    clean = rng.uniform(-0.4, 0.4, t)
    x0 = rng.uniform(-0.4, 0.4, t)
    return lambda v: compiled.graph(v, clean), x0


def _end_to_end_probe(rng):
    """Gradient of a cochlear loss w.r.t. one enhancer parameter tensor."""
    cfg = enh.WaveUNetConfig(depth=2, base_filters=2, kernel_down=5, kernel_up=3)
    model = enh.build(cfg, seed=int(rng.integers(1000)), dtype=np.float64)
    fb = FilterBankConfig(n_filters=5, downsample_to_hz=4000, **_PROBE_FB)
    compiled = compile_loss(LossSpec(kind="cochlear", filter_bank=fb))
    t = 160
    x_in = rng.uniform(-0.5, 0.5, (1, t))
    clean = rng.uniform(-0.4, 0.4, t)
    names = sorted(model.params)
    pname = names[int(rng.integers(len(names)))]

    def f(v):
        vals = {k: (v if k == pname else dg.const(p)) for k, p in model.params.items()}
        y = enh.forward_graph(vals, cfg, dg.const(x_in))
        return compiled.graph(dg.reshape(y, (t,)), clean)

    return f, model.params[pname]


def run_suite(suite: str = "all", tolerance: float = 1e-5, h: float = 1e-6,
              probes: int = 100, seed: int = 20260809, report=None) -> list:
    """Run the requested gradient suite; returns a list of SuiteResult."""
    if suite not in ("all", "quick"):
        raise ValueError(f"unknown suite {suite!r}")
    if suite == "quick":
        probes = max(3, probes // 20)

    results = []
    errors = {}
    t0 = time.time()
    rng = np.random.default_rng(seed)
    counts = {}
    for _ in range(probes):
        for name, f, x0 in _primitive_probes(rng):
            err = dg.grad_check(f, dg.Value(np.asarray(x0, dtype=np.float64)), h=h)
            errors[name] = max(errors.get(name, 0.0), err)
            counts[name] = counts.get(name, 0) + 1
    prim_t = time.time() - t0
    for name in sorted(errors):
        results.append(SuiteResult(name, errors[name], counts[name],
                                   prim_t / len(errors), tolerance))

    heavier = [
        ("cochleagram_vjp", _cochlea_probe, probes),
        ("cochlear_loss", _cochlear_loss_probe, max(10, probes // 4)),
        ("deep_feature_loss", _deep_loss_probe, max(6, probes // 16)),
        ("end_to_end_enhancer", _end_to_end_probe, max(10, probes // 4)),
    ]
    for name, factory, n in heavier:
        t0 = time.time()
        worst = 0.0
        rng = np.random.default_rng((seed, sum(name.encode())))
        for _ in range(n):
            f, x0 = factory(rng)
            worst = max(worst, dg.grad_check(f, dg.Value(np.asarray(x0, np.float64)), h=h))
        results.append(SuiteResult(name, worst, n, time.time() - t0, tolerance))

    if report:
        for r in results:
            report(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} "
                   f"max_rel_err={r.max_error:.3e}  probes={r.n_probes}  ({r.seconds:.1f}s)")
    return results
