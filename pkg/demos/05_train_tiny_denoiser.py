"""Train a small Wave-U-Net under two losses and compare the outputs.

Desk-scale throughout: a generated corpus, a depth-3 model, and a few
hundred steps. Expect a visible SI-SDR gap over the unprocessed input,
not paper-grade quality. Takes a couple of minutes on a laptop.
"""

import time
from pathlib import Path

import numpy as np

from denoisekit import datamix, enhancer, losses, metrics, trainer
from denoisekit.audio import Waveform, write_wav
from denoisekit.cochlea import FilterBankConfig

out = Path(__file__).parent / "out"
corpus_dir = out / "corpus"
if not (corpus_dir / "manifest.json").exists():
    print("synthesizing toy corpus...")
    datamix.build_toy_corpus(corpus_dir, n_speech=60, sample_rate_hz=8000,
                             clip_s=3.0, seed=0, noise_s=20.0)
manifest = datamix.CorpusManifest.load(corpus_dir / "manifest.json")

fb = FilterBankConfig(n_filters=20, f_min_hz=30, f_max_hz=3600,
                      sample_rate_hz=8000, downsample_to_hz=4000)
specs = {
    "waveform_l1": losses.LossSpec(kind="waveform_l1"),
    "cochlear_n20": losses.LossSpec(kind="cochlear", filter_bank=fb),
}

models = {}
for name, spec in specs.items():
    sampler = datamix.TrainingSampler(manifest, segment_s=1.0, snr_range=(-5, 10), seed=1)
    model = enhancer.build(enhancer.WaveUNetConfig(depth=3, base_filters=8,
                                                   output_mode="residual"), seed=2)
    t0 = time.time()
    run = trainer.train(model, spec, sampler, trainer.TrainConfig(
        steps=300, batch=4, lr=2e-4, seed=3, checkpoint_every=0))
    first, last = run.loss_curve[0][2], run.loss_curve[-1][2]
    print(f"{name}: 300 steps in {time.time()-t0:.0f}s, EMA loss {first:.4f} -> {last:.4f}")
    models[name] = model

# listen to the difference on one held-out mixture
entry = manifest.select(kind="speech", split="val")[0]
clean = manifest.read(entry).samples[:16000]
noise = manifest.read(manifest.select(kind="noise", split="val", label="ssn")[0])
mix = datamix.mix_at_snr(clean, noise.samples[: len(clean)], 0.0)
noisy = Waveform(mix.mixture, 8000)
write_wav(noisy, out / "demo_noisy.wav")
write_wav(Waveform(mix.clean, 8000), out / "demo_clean.wav")

base = metrics.sdr(mix.clean, mix.mixture, "scale_invariant")
print(f"\nunprocessed SI-SDR at 0 dB: {base:+.2f} dB")
for name, model in models.items():
    est = enhancer.enhance(model, noisy)
    si = metrics.sdr(mix.clean, est.samples, "scale_invariant")
    write_wav(est, out / f"demo_{name}.wav")
    print(f"{name}: SI-SDR {si:+.2f} dB ({si - base:+.2f} dB vs unprocessed)")
