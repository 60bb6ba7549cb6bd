"""Parameterized cochlear front end.

Waveforms pass through a bank of zero-phase bandpass filters (half-cycle
cosine magnitude responses applied in the FFT domain), half-wave
rectification, optional envelope low-pass, anti-aliased decimation, and
smoothed power compression. The whole pipeline has a hand-written
vector-Jacobian product so it can serve as a differentiable loss.

Three bank layouts: `erb` (cutoffs evenly spaced on the ERB-number
scale, squared responses tile the band exactly), `linear` (even in Hz),
and `reversed_erb` (ERB center frequencies but Hz bandwidths swapped
end-for-end, giving broad low-frequency and narrow high-frequency
filters; tiling intentionally broken).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft as sfft

from . import diffgraph as dg
from .audio import Waveform, design_lowpass
from .errors import ConfigError, ShapeError

_FFT_WORKERS = 2  # row-parallel transforms

#: Glasberg & Moore ERB-number scale constants.
_ERB_SCALE = 21.4
_ERB_RATE = 4.37e-3  # per Hz


def erb_number(f_hz) -> float:
    """Map frequency in Hz to the ERB-number scale (0 at 0 Hz, monotone)."""
    f = np.asarray(f_hz, dtype=np.float64)
    if np.any(f < 0):
        raise ConfigError("erb_number is defined for non-negative frequencies")
    out = _ERB_SCALE * np.log10(_ERB_RATE * f + 1.0)
    return float(out) if np.isscalar(f_hz) else out


def erb_to_hz(erb) -> float:
    """Inverse of erb_number."""
    e = np.asarray(erb, dtype=np.float64)
    out = (10.0 ** (e / _ERB_SCALE) - 1.0) / _ERB_RATE
    return float(out) if np.isscalar(erb) else out


@dataclass(frozen=True)
class FilterBankConfig:
    n_filters: int = 40
    spacing: str = "erb"  # erb | linear | reversed_erb
    f_min_hz: float = 20.0
    f_max_hz: float = 10000.0
    sample_rate_hz: int = 20000
    downsample_to_hz: int = 10000
    compression_exponent: float = 0.3
    envelope_mode: str = "off"  # off | lowpass
    envelope_cutoff_hz: float = 100.0
    compression_epsilon: float = 1e-8

    def validate(self):
        if self.n_filters < 1:
            raise ConfigError("n_filters must be >= 1")
        if self.spacing not in ("erb", "linear", "reversed_erb"):
            raise ConfigError(f"unknown spacing {self.spacing!r}")
        if not (0 < self.f_min_hz < self.f_max_hz <= self.sample_rate_hz / 2):
            raise ConfigError(
                f"need 0 < f_min < f_max <= nyquist, got [{self.f_min_hz}, {self.f_max_hz}] "
                f"at {self.sample_rate_hz} Hz")
        if not (0 < self.compression_exponent <= 1):
            raise ConfigError("compression_exponent must lie in (0, 1]")
        if self.envelope_mode not in ("off", "lowpass"):
            raise ConfigError(f"unknown envelope_mode {self.envelope_mode!r}")
        if self.downsample_to_hz <= 0 or self.sample_rate_hz % self.downsample_to_hz:
            raise ConfigError(
                f"downsample_to_hz must divide the sample rate, got "
                f"{self.downsample_to_hz} vs {self.sample_rate_hz}")
        return self


@dataclass
class CochlearFeatures:
    """Subband features: values (n_filters x frames), all >= 0 and finite."""

    values: np.ndarray
    rate_hz: int


class FilterBank:
    """Immutable bank of zero-phase bandpass filters.

    `frequency_responses` samples each magnitude response on a 1 Hz
    reference grid (nfft = sample rate); `response_matrix(nfft)` gives
    exact responses on the FFT grid of an nfft-point transform.
    """

    def __init__(self, config, center_freqs_hz, cutoff_freqs_hz, scale_params):
        self.config = config
        self.center_freqs_hz = np.asarray(center_freqs_hz, dtype=np.float64)
        self.cutoff_freqs_hz = [tuple(c) for c in cutoff_freqs_hz]
        self._scale_params = scale_params  # per-filter (mode-specific) response params
        self._resp_cache: dict = {}
        self.frequency_responses = self.response_matrix(int(config.sample_rate_hz))

    @property
    def n_filters(self):
        return self.config.n_filters

    def bandwidths_hz(self) -> np.ndarray:
        return np.array([hi - lo for lo, hi in self.cutoff_freqs_hz])

    def _response_at(self, freqs_hz: np.ndarray) -> np.ndarray:
        """Evaluate all magnitude responses at arbitrary frequencies."""
        mode = self.config.spacing
        out = np.zeros((self.n_filters, freqs_hz.size))
        if mode in ("erb", "linear"):
            pos = erb_number(freqs_hz) if mode == "erb" else freqs_hz
            centers, spacing = self._scale_params
            for k in range(self.n_filters):
                u = (pos - centers[k]) / spacing
                inside = np.abs(u) <= 1.0
                out[k, inside] = np.cos(0.5 * np.pi * u[inside])
        else:  # reversed_erb: cosine lobes in Hz around ERB-spaced centers
            centers, half_widths = self._scale_params
            for k in range(self.n_filters):
                u = (freqs_hz - centers[k]) / half_widths[k]
                inside = np.abs(u) <= 1.0
                out[k, inside] = np.cos(0.5 * np.pi * u[inside])
            peaks = out.max(axis=1, keepdims=True)
            peaks[peaks == 0] = 1.0
            out /= peaks
        return out

    def response_matrix(self, nfft: int, dtype=np.float64) -> np.ndarray:
        """(n_filters, nfft//2 + 1) magnitude responses on the rfft grid."""
        key = (int(nfft), np.dtype(dtype).name)
        if key not in self._resp_cache:
            freqs = np.fft.rfftfreq(int(nfft), d=1.0 / self.config.sample_rate_hz)
            self._resp_cache[key] = self._response_at(freqs).astype(dtype)
        return self._resp_cache[key]


def build_filter_bank(cfg: FilterBankConfig) -> FilterBank:
    """Construct a bank whose squared responses tile the covered band.

    Cutoff grid: n+2 points evenly spaced on the mode's scale between
    f_min and f_max; filter k spans grid points k-1 .. k+1 with a
    half-cycle cosine, so adjacent filters overlap 50%.
    """
    cfg.validate()
    n = cfg.n_filters

    def grid_and_centers(scale, unscale):
        g = np.linspace(scale(cfg.f_min_hz), scale(cfg.f_max_hz), n + 2)
        centers_scale = g[1:-1]
        spacing = g[1] - g[0]
        cut_lo = unscale(g[:-2])
        cut_hi = unscale(g[2:])
        return g, centers_scale, spacing, cut_lo, cut_hi

    if cfg.spacing in ("erb", "reversed_erb"):
        g, centers_scale, spacing, cut_lo, cut_hi = grid_and_centers(erb_number, erb_to_hz)
        centers_hz = erb_to_hz(centers_scale)
    else:
        g, centers_scale, spacing, cut_lo, cut_hi = grid_and_centers(lambda f: f, lambda f: f)
        centers_hz = np.asarray(centers_scale)

    min_gap_hz = np.min(np.diff(erb_to_hz(g) if cfg.spacing != "linear" else g))
    ref_bin_hz = 1.0  # reference FFT grid: nfft = sample rate
    if min_gap_hz < ref_bin_hz:
        raise ConfigError(
            f"{n} filters pack adjacent cutoffs {min_gap_hz:.3f} Hz apart, "
            f"below the {ref_bin_hz:.0f} Hz reference FFT bin")

    if cfg.spacing == "reversed_erb":
        # keep ERB centers, hand filter k the Hz bandwidth of filter n+1-k
        widths = (cut_hi - cut_lo)[::-1] / 2.0
        cutoffs = list(zip(centers_hz - widths, centers_hz + widths))
        params = (centers_hz, widths)
    else:
        cutoffs = list(zip(cut_lo, cut_hi))
        params = (centers_scale, spacing)

    return FilterBank(cfg, centers_hz, cutoffs, params)


@lru_cache(maxsize=32)
def _cached_bank(cfg: FilterBankConfig) -> FilterBank:
    return build_filter_bank(cfg)


def _post_filter_gain(bank: FilterBank, nfft: int) -> np.ndarray | None:
    """Combined rfft-domain gain applied to the rectified subbands.

    Folds the optional 4th-order Butterworth envelope low-pass together
    with the decimation anti-alias low-pass (the audio-core Kaiser sinc
    kernel, applied zero-phase and circularly, matching the subband
    filtering convention). Returns None when neither stage is active.
    """
    cfg = bank.config
    f = np.fft.rfftfreq(nfft, d=1.0 / cfg.sample_rate_hz)
    gain = None
    if cfg.envelope_mode == "lowpass":
        gain = 1.0 / np.sqrt(1.0 + (f / cfg.envelope_cutoff_hz) ** 8)
    q = cfg.sample_rate_hz // cfg.downsample_to_hz
    if q > 1:
        h = design_lowpass(0.45 * cfg.downsample_to_hz, cfg.sample_rate_hz, phases=q)
        # fold the centered kernel onto the circular grid (valid for any length)
        hp = np.zeros(nfft)
        np.add.at(hp, (np.arange(h.size) - (h.size - 1) // 2) % nfft, h)
        d = np.fft.rfft(hp).real  # symmetric kernel: imaginary part is roundoff
        gain = d if gain is None else gain * d
    return gain


class _CochleaContext:
    __slots__ = ("bank", "nfft", "rect_mask", "post_mask", "comp_grad", "gain",
                 "q", "dtype")


def _pipeline_tables(bank: FilterBank, t: int, dtype):
    key = ("pipe", t, np.dtype(dtype).name)
    if key not in bank._resp_cache:
        gain = _post_filter_gain(bank, t)
        bank._resp_cache[key] = None if gain is None else gain.astype(dtype)
    return bank.response_matrix(t, dtype), bank._resp_cache[key]


def _cochleagram_forward(x: np.ndarray, bank: FilterBank):
    """Run the pipeline, returning (features, context-for-vjp)."""
    cfg = bank.config
    t = x.shape[-1]
    if x.ndim != 1:
        raise ShapeError("cochleagram expects a 1-D sample array")
    dtype = x.dtype if x.dtype in (np.float32, np.float64) else np.float64
    ctx = _CochleaContext()
    ctx.bank, ctx.nfft, ctx.dtype = bank, t, dtype
    h_resp, gain = _pipeline_tables(bank, t, dtype)
    ctx.gain = gain
    ctx.q = cfg.sample_rate_hz // cfg.downsample_to_hz

    spectrum = sfft.rfft(x.astype(dtype, copy=False))
    subbands = sfft.irfft(spectrum[None, :] * h_resp, n=t, workers=_FFT_WORKERS)

    ctx.rect_mask = subbands > 0
    r = np.where(ctx.rect_mask, subbands, 0.0)

    if gain is not None:
        z = sfft.rfft(r, axis=1, workers=_FFT_WORKERS)
        z *= gain[None, :]
        r = sfft.irfft(z, n=t, axis=1, workers=_FFT_WORKERS)
    if ctx.q > 1:
        r = r[:, ::ctx.q]

    # the low-pass filters' negative lobes can push rectified subbands
    # slightly below zero; clamp so the fractional power stays defined
    ctx.post_mask = r > 0
    r = np.where(ctx.post_mask, r, 0.0)

    p, eps = cfg.compression_exponent, cfg.compression_epsilon
    features = (r + eps) ** p - eps ** p
    ctx.comp_grad = p * (r + eps) ** (p - 1.0)
    return features.astype(dtype, copy=False), ctx


def _cochleagram_adjoint(g: np.ndarray, ctx: _CochleaContext) -> np.ndarray:
    """Exact adjoint of the forward pipeline (gradient w.r.t. samples)."""
    t = ctx.nfft
    gr = g * ctx.comp_grad
    gr = np.where(ctx.post_mask, gr, 0.0)

    if ctx.q > 1:
        up = np.zeros((gr.shape[0], t), dtype=gr.dtype)
        up[:, ::ctx.q] = gr
        gr = up
    if ctx.gain is not None:  # real even kernel: filtering is self-adjoint
        z = sfft.rfft(gr, axis=1, workers=_FFT_WORKERS)
        z *= ctx.gain[None, :]
        gr = sfft.irfft(z, n=t, axis=1, workers=_FFT_WORKERS)

    gr = np.where(ctx.rect_mask, gr, 0.0)

    h_resp, _ = _pipeline_tables(ctx.bank, t, gr.dtype)
    gx = sfft.irfft(np.sum(sfft.rfft(gr, axis=1, workers=_FFT_WORKERS) * h_resp, axis=0), n=t)
    return gx.astype(ctx.dtype, copy=False)


def subband_decomposition(w: Waveform, cfg: FilterBankConfig) -> np.ndarray:
    """Pre-rectification subbands (n_filters x len(w)), for analysis/tests."""
    bank = _cached_bank(cfg.validate())
    h_resp = bank.response_matrix(len(w))
    spectrum = np.fft.rfft(w.samples)
    return np.fft.irfft(spectrum[None, :] * h_resp, n=len(w))


def cochleagram(w: Waveform, cfg: FilterBankConfig) -> CochlearFeatures:
    """Full cochlear feature pipeline for a waveform."""
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError(
            f"waveform rate {w.sample_rate_hz} != filter bank rate {cfg.sample_rate_hz}")
    bank = _cached_bank(cfg.validate())
    features, _ = _cochleagram_forward(w.samples, bank)
    return CochlearFeatures(features, cfg.downsample_to_hz)


def cochleagram_vjp(w: Waveform, cfg: FilterBankConfig, upstream_gradient: np.ndarray) -> np.ndarray:
    """Gradient of the cochleagram w.r.t. the input samples.

    `upstream_gradient` must match the feature array shape; rectifier
    gradients are indicator(x > 0), compression gradient p*(x+eps)^(p-1).
    """
    if w.sample_rate_hz != cfg.sample_rate_hz:
        raise ConfigError(
            f"waveform rate {w.sample_rate_hz} != filter bank rate {cfg.sample_rate_hz}")
    bank = _cached_bank(cfg.validate())
    features, ctx = _cochleagram_forward(w.samples, bank)
    upstream = np.asarray(upstream_gradient, dtype=features.dtype)
    if upstream.shape != features.shape:
        raise ShapeError(
            f"upstream gradient shape {upstream.shape} != features {features.shape}")
    return _cochleagram_adjoint(upstream, ctx)


def cochleagram_op(x: dg.Value, bank: FilterBank) -> dg.Value:
    """Cochleagram as a diffgraph node (custom vjp)."""
    x = x if isinstance(x, dg.Value) else dg.Value(x)
    features, ctx = _cochleagram_forward(x.data, bank)

    def vjp(g):
        return (_cochleagram_adjoint(np.asarray(g, dtype=features.dtype), ctx),)

    return dg._make(features, (x,), vjp)
