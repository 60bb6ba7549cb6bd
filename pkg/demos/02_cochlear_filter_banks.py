"""Cochlear filter banks and cochleagrams.

Builds ERB, linear, and reversed banks; checks the squared-response
tiling; and prints a coarse character plot of a toy-speech cochleagram.
"""

import numpy as np

from denoisekit.audio import Waveform
from denoisekit.cochlea import FilterBankConfig, build_filter_bank, cochleagram
from denoisekit.toysignals import toy_speech

for spacing in ("erb", "linear", "reversed_erb"):
    cfg = FilterBankConfig(n_filters=40, spacing=spacing, sample_rate_hz=20000)
    bank = build_filter_bank(cfg)
    h = bank.response_matrix(20000)
    tile = (h ** 2).sum(axis=0)
    freqs = np.fft.rfftfreq(20000, 1 / 20000)
    inside = (freqs >= bank.cutoff_freqs_hz[1][0]) & (freqs <= bank.cutoff_freqs_hz[-2][1])
    flat_db = np.ptp(10 * np.log10(tile[inside] + 1e-12))
    bws = bank.bandwidths_hz()
    print(f"{spacing:>13}: centers {bank.center_freqs_hz[0]:7.1f}..{bank.center_freqs_hz[-1]:7.1f} Hz, "
          f"bandwidth {bws[0]:6.1f} -> {bws[-1]:7.1f} Hz, tiling ripple {flat_db:5.2f} dB")

cfg = FilterBankConfig(n_filters=40, sample_rate_hz=20000)
speech = Waveform(toy_speech(1.0, np.random.default_rng(3), 20000), 20000)
feats = cochleagram(speech, cfg)
print(f"\ncochleagram: {feats.values.shape[0]} bands x {feats.values.shape[1]} frames @ {feats.rate_hz} Hz")

# crude terminal heat map, high frequencies on top
chars = " .:-=+*#%@"
small = feats.values[:, :: feats.values.shape[1] // 72][::-1]
small = small / small.max()
for row in small[::4]:
    print("".join(chars[min(int(v * (len(chars) - 1) * 1.8), len(chars) - 1)] for v in row))
