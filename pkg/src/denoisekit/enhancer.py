"""Wave-U-Net: a 1-D convolutional encoder-decoder over raw waveforms.

Contracting blocks are conv -> LeakyReLU -> decimate(2); the expanding
path mirrors them with linear upsampling and skip concatenation. Channel
counts grow by `growth_factor` per level, capped at `channel_cap` (an
uncapped 12-level doubling from 24 would reach ~49k channels, so the cap
is load-bearing at paper depth).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import diffgraph as dg
from .audio import Waveform
from .errors import ConfigError

__all__ = ["WaveUNetConfig", "EnhancerModel", "build", "forward_graph", "enhance",
           "channel_progression", "parameter_count"]


@dataclass(frozen=True)
class WaveUNetConfig:
    depth: int = 12
    base_filters: int = 24
    growth_factor: float = 2.0
    channel_cap: int = 512
    kernel_down: int = 15
    kernel_up: int = 5
    leaky_slope: float = 0.2
    output_mode: str = "direct_tanh"  # direct_tanh | residual

    def validate(self):
        if self.depth < 1:
            raise ConfigError("depth must be >= 1")
        if self.base_filters < 1:
            raise ConfigError("base_filters must be >= 1")
        if self.kernel_down % 2 == 0 or self.kernel_up % 2 == 0:
            raise ConfigError("kernels must be odd")
        if self.growth_factor <= 0:
            raise ConfigError("growth_factor must be positive")
        if self.output_mode not in ("direct_tanh", "residual"):
            raise ConfigError(f"unknown output_mode {self.output_mode!r}")
        return self


def channel_progression(cfg: WaveUNetConfig) -> list[int]:
    """Channels out of each contracting block, plus the bottleneck."""
    return [min(cfg.channel_cap, int(round(cfg.base_filters * cfg.growth_factor ** i)))
            for i in range(cfg.depth + 1)]


@dataclass
class EnhancerModel:
    config: WaveUNetConfig
    params: dict

    def as_values(self):
        return {k: dg.param(v) for k, v in self.params.items()}

    def config_dict(self):
        return asdict(self.config)


def _he(rng, shape, dtype):
    fan_in = int(np.prod(shape[1:]))
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def build(cfg: WaveUNetConfig, seed: int = 0, dtype=np.float32) -> EnhancerModel:
    """Deterministic He-initialized model for the given seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    ch = channel_progression(cfg)
    params = {}
    c_prev = 1
    for i in range(cfg.depth):
        params[f"down{i}.w"] = _he(rng, (ch[i], c_prev, cfg.kernel_down), dtype)
        params[f"down{i}.b"] = np.zeros(ch[i], dtype=dtype)
        c_prev = ch[i]
    params["bottleneck.w"] = _he(rng, (ch[cfg.depth], c_prev, cfg.kernel_down), dtype)
    params["bottleneck.b"] = np.zeros(ch[cfg.depth], dtype=dtype)
    for i in reversed(range(cfg.depth)):
        c_in = ch[i + 1] + ch[i]  # upsampled deeper features + skip
        params[f"up{i}.w"] = _he(rng, (ch[i], c_in, cfg.kernel_up), dtype)
        params[f"up{i}.b"] = np.zeros(ch[i], dtype=dtype)
    params["final.w"] = _he(rng, (1, ch[0], 1), dtype)
    params["final.b"] = np.zeros(1, dtype=dtype)
    return EnhancerModel(cfg, params)


def parameter_count(model: EnhancerModel) -> int:
    return sum(int(v.size) for v in model.params.values())


def _crop_to_match(a, b):
    """Symmetrically crop the longer of two (..., C, T) values to the shorter."""
    ta, tb = a.data.shape[-1], b.data.shape[-1]
    if ta == tb:
        return a, b
    if ta > tb:
        lo = (ta - tb) // 2
        return dg.crop(a, -1, lo, lo + tb), b
    lo = (tb - ta) // 2
    return a, dg.crop(b, -1, lo, lo + ta)


def forward_graph(param_values: dict, cfg: WaveUNetConfig, x: dg.Value) -> dg.Value:
    """Differentiable forward pass.

    x: (..., 1, T) Value. Output has the same length: the input is
    zero-padded up to a multiple of 2**depth internally and the result
    cropped back.
    """
    slope = cfg.leaky_slope
    t = x.data.shape[-1]
    block = 2 ** cfg.depth
    t_pad = -(-t // block) * block
    h = x
    if t_pad != t:
        zeros = np.zeros(x.data.shape[:-1] + (t_pad - t,), dtype=x.data.dtype)
        h = dg.concat([x, dg.const(zeros)], axis=-1)

    skips = []
    for i in range(cfg.depth):
        h = dg.leaky_relu(
            dg.conv1d(h, param_values[f"down{i}.w"], param_values[f"down{i}.b"]),
            slope)
        skips.append(h)
        h = dg.decimate(h, 2)
    h = dg.leaky_relu(
        dg.conv1d(h, param_values["bottleneck.w"], param_values["bottleneck.b"]),
        slope)
    for i in reversed(range(cfg.depth)):
        h = dg.linear_upsample(h, 2)
        h, skip = _crop_to_match(h, skips[i])
        h = dg.concat([h, skip], axis=-2)
        h = dg.leaky_relu(
            dg.conv1d(h, param_values[f"up{i}.w"], param_values[f"up{i}.b"]),
            slope)
    y = dg.conv1d(h, param_values["final.w"], param_values["final.b"])
    if cfg.output_mode == "direct_tanh":
        y = dg.tanh(y)
    else:
        y = dg.add(y, _pad_like(x, t_pad))  # residual against the input
    if t_pad != t:
        y = dg.crop(y, -1, 0, t)
    return y


def _pad_like(x: dg.Value, t_pad: int) -> dg.Value:
    t = x.data.shape[-1]
    if t == t_pad:
        return x
    zeros = np.zeros(x.data.shape[:-1] + (t_pad - t,), dtype=x.data.dtype)
    return dg.concat([x, dg.const(zeros)], axis=-1)


def enhance(model: EnhancerModel, w: Waveform) -> Waveform:
    """Run the transform over a waveform (no gradient bookkeeping)."""
    dtype = next(iter(model.params.values())).dtype
    x = dg.const(w.samples.astype(dtype)[None, :])
    values = {k: dg.const(v) for k, v in model.params.items()}
    y = forward_graph(values, model.config, x)
    return Waveform(np.asarray(y.data[0], dtype=np.float64), w.sample_rate_hz)
