"""SNR-exact mixing, speech-shaped noise, babble, and the 4-bit anchor."""

from pathlib import Path

import numpy as np

from denoisekit.audio import Waveform, rms, write_wav
from denoisekit.datamix import (babble, measured_snr_db, mix_at_snr,
                                quantize_anchor, speech_shaped_noise)
from denoisekit.toysignals import toy_speech

out = Path(__file__).parent / "out"
out.mkdir(exist_ok=True)
sr = 20000

speech = Waveform(toy_speech(3.0, np.random.default_rng(1), sr), sr)
ssn = speech_shaped_noise([speech], 3.0, seed=2)
voices = [Waveform(toy_speech(4.0, np.random.default_rng(10 + v), sr), sr) for v in range(8)]
bab = babble(voices, n_voices=8, duration_s=3.0, seed=3)

for snr in (+10.0, 0.0, -10.0):
    mix = mix_at_snr(speech.samples, ssn.samples, snr)
    print(f"requested {snr:+6.1f} dB -> measured {measured_snr_db(mix):+12.9f} dB "
          f"(noise gain {mix.noise_gain:.3f}, joint rescale {mix.rescale:.3f})")
    write_wav(Waveform(mix.mixture, sr), out / f"mix_{int(snr):+03d}dB.wav")

print(f"\nssn: rms {rms(ssn):.3f}; babble: rms {rms(bab):.3f}")

anchor = quantize_anchor(speech, bits=4)
levels = np.unique(anchor.samples)
print(f"4-bit anchor uses {levels.size} levels, max error "
      f"{np.max(np.abs(anchor.samples - speech.samples)):.4f} (step/2 = 0.0625)")
write_wav(anchor, out / "anchor_low.wav")
write_wav(speech, out / "anchor_high.wav")
