"""Objective metrics: SDR, SI-SDR, and STOI behavior on known cases."""

import numpy as np

from denoisekit.audio import Waveform
from denoisekit.datamix import mix_at_snr, speech_shaped_noise
from denoisekit.metrics import sdr, stoi
from denoisekit.toysignals import toy_speech

rng = np.random.default_rng(0)
s = rng.standard_normal(2000)
s /= np.linalg.norm(s)
u = rng.standard_normal(2000)
u -= (u @ s) * s
u /= np.linalg.norm(u)

print("SDR on constructed cases")
print(f"  perfect estimate:        {sdr(s, s):+6.1f} dB (clamped)")
print(f"  unit-norm + 0.1 orth:    {sdr(s, s + 0.1 * u, 'plain'):+6.2f} dB (expect +20)")
print(f"  2x gain, plain:          {sdr(s, 2 * s, 'plain'):+6.2f} dB")
print(f"  2x gain, scale-invariant:{sdr(s, 2 * s):+6.1f} dB (projection removes gain)")

speech = Waveform(toy_speech(4.0, np.random.default_rng(1), 10000), 10000)
ssn = speech_shaped_noise([speech], 4.0, seed=2)
print(f"\nSTOI(x, x) = {stoi(speech, speech):.6f}")
print("STOI of SSN mixtures:")
for snr in (20, 10, 0, -10):
    mix = mix_at_snr(speech.samples, ssn.samples, snr)
    score = stoi(Waveform(mix.clean, 10000), Waveform(mix.mixture, 10000))
    print(f"  {snr:+4d} dB: {score:.3f}")
print(f"noise only: {stoi(speech, ssn):.3f}")
