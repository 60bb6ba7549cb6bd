"""Synthetic speech-like and noise-texture generators.

Keeps the repo dataset-free: "words" are harmonic complexes with
word-specific pitch, two formant-like spectral peaks, and a distinct
amplitude-modulation pattern; "speech" is a stream of syllables from
the same machinery; noise textures give a second (environmental-sound)
labelling task and training noise.
"""

from __future__ import annotations

import numpy as np

N_WORD_CLASSES = 16
N_TEXTURE_CLASSES = 4


def _ramp(n_samples, sr, ms=20.0):
    k = max(2, min(n_samples // 2, int(sr * ms / 1000)))
    env = np.ones(n_samples)
    win = 0.5 * (1 - np.cos(np.pi * np.arange(k) / k))
    env[:k] = win
    env[-k:] = win[::-1]
    return env


def word_attributes(word: int) -> dict:
    """Fixed per-class acoustic attributes (deterministic)."""
    rng = np.random.default_rng(7919 * word + 13)
    f0 = 95.0 * (260.0 / 95.0) ** (word / (N_WORD_CLASSES - 1))
    return {
        "f0_hz": f0,
        "formant_a_hz": float(rng.uniform(350, 1200)),
        "formant_b_hz": float(rng.uniform(1400, 3200)),
        "formant_bw_hz": float(rng.uniform(150, 350)),
        "am_rate_hz": 1.8 + 0.75 * word,
        "am_depth": float(rng.uniform(0.55, 0.85)),
    }


def harmonic_burst(f0_hz, formants, duration_s, sr, rng, am=None, max_freq=None):
    """One voiced burst: harmonics of f0 shaped by formant peaks."""
    n = int(round(duration_s * sr))
    t = np.arange(n) / sr
    fa, fb, bw = formants
    top = min(0.42 * sr, max_freq or 0.42 * sr)
    x = np.zeros(n)
    k = 1
    while k * f0_hz < top:
        f = k * f0_hz
        amp = (np.exp(-((f - fa) / bw) ** 2)
               + 0.7 * np.exp(-((f - fb) / bw) ** 2)
               + 0.04 / k)
        x += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
        k += 1
    if am is not None:
        rate, depth, phase = am
        x *= 1.0 - depth * 0.5 * (1 + np.sin(2 * np.pi * rate * t + phase))
    x *= _ramp(n, sr)
    peak = np.max(np.abs(x))
    return x / peak if peak > 0 else x


def toy_word(word: int, rng: np.random.Generator, sr: int = 20000,
             clip_s: float = 1.0) -> np.ndarray:
    """One word instance at a random offset inside a fixed-length clip."""
    a = word_attributes(word % N_WORD_CLASSES)
    dur = 0.7 * rng.uniform(0.9, 1.1)
    f0 = a["f0_hz"] * rng.uniform(0.97, 1.03)
    burst = harmonic_burst(
        f0, (a["formant_a_hz"], a["formant_b_hz"], a["formant_bw_hz"]),
        dur, sr, rng,
        am=(a["am_rate_hz"], a["am_depth"], rng.uniform(0, 2 * np.pi)))
    n = int(round(clip_s * sr))
    clip = np.zeros(n)
    offset = rng.integers(0, max(1, n - burst.size + 1))
    clip[offset:offset + burst.size] = burst[: n - offset]
    r = np.sqrt(np.mean(clip ** 2))
    return 0.12 * clip / r if r > 0 else clip


def noise_texture(texture: int, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-RMS noise texture; four distinct classes."""
    texture %= N_TEXTURE_CLASSES
    x = rng.standard_normal(n)
    if texture == 1:  # pink-ish: 1/f amplitude slope
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n, 1 / sr)
        f[0] = f[1]
        x = np.fft.irfft(spec / np.sqrt(f), n=n)
    elif texture == 2:  # amplitude-modulated white noise
        t = np.arange(n) / sr
        x *= 0.5 * (1 + np.sin(2 * np.pi * 6.0 * t + rng.uniform(0, 2 * np.pi)))
    elif texture == 3:  # low-frequency rumble
        spec = np.fft.rfft(x)
        f = np.fft.rfftfreq(n, 1 / sr)
        spec[f > 300] = 0
        x = np.fft.irfft(spec, n=n)
    r = np.sqrt(np.mean(x ** 2))
    return x / r if r > 0 else x


def toy_word_example(word: int, texture: int, seed: int, sr: int = 20000,
                     clip_s: float = 1.0, snr_db_range=(8.0, 20.0)) -> np.ndarray:
    """Word embedded in a noise texture at a random SNR."""
    rng = np.random.default_rng(seed)
    w = toy_word(word, rng, sr, clip_s)
    noise = noise_texture(texture, w.size, sr, rng)
    snr = rng.uniform(*snr_db_range)
    w_rms = np.sqrt(np.mean(w ** 2))
    gain = w_rms / (10 ** (snr / 20))
    x = w + gain * noise
    peak = np.max(np.abs(x))
    return x / (peak * 1.05) * 0.95 if peak > 0.95 else x


def toy_speech(duration_s: float, rng: np.random.Generator, sr: int = 20000) -> np.ndarray:
    """Syllable stream with pauses; speech-like spectrum and rhythm.

    Pause statistics roughly match read speech (~40-50% low-energy
    time), which matters for anything exploiting temporal sparsity.
    """
    n = int(round(duration_s * sr))
    out = np.zeros(n)
    pos = int(rng.uniform(0, 0.08) * sr)
    while pos < n:
        f0 = rng.uniform(90, 260)
        formants = (rng.uniform(350, 1100), rng.uniform(1300, 3200), rng.uniform(150, 400))
        dur = rng.uniform(0.10, 0.22)
        burst = harmonic_burst(f0, formants, dur, sr, rng,
                               am=(rng.uniform(2, 8), rng.uniform(0.2, 0.6),
                                   rng.uniform(0, 2 * np.pi)))
        burst *= rng.uniform(0.6, 1.0)
        end = min(n, pos + burst.size)
        out[pos:end] += burst[: end - pos]
        pos = end + int(rng.uniform(0.05, 0.22) * sr)
    r = np.sqrt(np.mean(out ** 2))
    if r > 0:
        out *= 0.15 / r
    return np.clip(out, -0.99, 0.99)
