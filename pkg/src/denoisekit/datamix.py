"""Corpus management, SNR-exact mixing, noise synthesis, and anchors.

SNR is defined on full-segment RMS, so a requested mix is exact by
construction. When a mixture would clip, the (noisy, clean) pair is
rescaled jointly and the factor recorded, keeping losses consistent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.signal import welch

from . import toysignals
from .audio import Waveform, read_wav, rms, write_wav
from .errors import ConfigError, DegenerateInputError

__all__ = ["CorpusEntry", "CorpusManifest", "MixResult", "mix_at_snr",
           "speech_shaped_noise", "babble", "quantize_anchor",
           "sample_training_batch", "TrainingSampler", "build_toy_corpus"]


# ---------------------------------------------------------------------------
# corpus manifests


@dataclass
class CorpusEntry:
    path: str
    kind: str            # speech | noise
    split: str           # train | val | test
    duration_s: float
    label: str = ""      # optional grouping for noise types


@dataclass
class CorpusManifest:
    root: Path
    entries: list

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        root = (path.parent / doc.get("root", ".")).resolve()
        entries = [CorpusEntry(**e) for e in doc["entries"]]
        seen = {}
        for e in entries:
            if e.kind not in ("speech", "noise"):
                raise ConfigError(f"unknown kind {e.kind!r} for {e.path}")
            if e.split not in ("train", "val", "test"):
                raise ConfigError(f"unknown split {e.split!r} for {e.path}")
            if e.path in seen and seen[e.path] != e.split:
                raise ConfigError(f"{e.path} appears in two splits")
            seen[e.path] = e.split
            if not (root / e.path).exists():
                raise ConfigError(f"missing corpus file: {root / e.path}")
        return cls(root, entries)

    def save(self, path) -> None:
        doc = {"root": ".", "entries": [vars(e) for e in self.entries]}
        Path(path).write_text(json.dumps(doc, indent=2))

    def select(self, kind=None, split=None, label=None) -> list:
        out = []
        for e in self.entries:
            if kind and e.kind != kind:
                continue
            if split and e.split != split:
                continue
            if label and e.label != label:
                continue
            out.append(e)
        return out

    def read(self, entry: CorpusEntry) -> Waveform:
        return read_wav(self.root / entry.path)


# ---------------------------------------------------------------------------
# mixing


@dataclass
class MixResult:
    mixture: np.ndarray
    clean: np.ndarray
    noise_gain: float      # alpha applied to the noise before summing
    rescale: float = 1.0   # joint factor applied if the raw mixture clipped


def mix_at_snr(speech, noise, snr_db: float) -> MixResult:
    """speech + alpha*noise with alpha chosen for an exact RMS SNR."""
    s = speech.samples if isinstance(speech, Waveform) else np.asarray(speech, dtype=np.float64)
    n = noise.samples if isinstance(noise, Waveform) else np.asarray(noise, dtype=np.float64)
    if s.shape != n.shape:
        raise ConfigError(f"mix needs equal lengths, got {s.shape} vs {n.shape}")
    rs, rn = rms(s), rms(n)
    if rs == 0 or rn == 0:
        raise DegenerateInputError("mix_at_snr needs nonzero-RMS speech and noise")
    if not np.isfinite(snr_db):
        raise ConfigError("snr_db must be finite")
    alpha = rs / (rn * 10.0 ** (snr_db / 20.0))
    mixture = s + alpha * n
    clean = s
    scale = 1.0
    peak = np.max(np.abs(mixture))
    if peak > 1.0:
        scale = 1.0 / peak
        mixture = mixture * scale
        clean = s * scale
    return MixResult(mixture, np.array(clean), alpha, scale)


def measured_snr_db(mix: MixResult) -> float:
    """Recover the achieved speech-to-scaled-noise SNR from a mix."""
    noise_part = mix.mixture - mix.clean
    return 20.0 * np.log10(rms(mix.clean) / rms(noise_part))


# ---------------------------------------------------------------------------
# noise synthesis


def speech_shaped_noise(reference_speech, duration_s: float, seed: int = 0,
                        sample_rate_hz: int = None) -> Waveform:
    """Gaussian noise spectrally shaped to the references' Welch spectrum."""
    refs = [r if isinstance(r, Waveform) else Waveform(np.asarray(r), sample_rate_hz)
            for r in reference_speech]
    if not refs:
        raise ConfigError("speech_shaped_noise needs at least one reference clip")
    sr = refs[0].sample_rate_hz
    if any(r.sample_rate_hz != sr for r in refs):
        raise ConfigError("reference clips must share one sample rate")

    nper = min(1024, min(len(r) for r in refs))
    psd = None
    for r in refs:
        f, p = welch(r.samples, fs=sr, nperseg=nper)
        psd = p if psd is None else psd + p
    amp = np.sqrt(psd / len(refs))

    n = int(round(duration_s * sr))
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    grid = np.fft.rfftfreq(n, 1.0 / sr)
    shape = np.interp(grid, f, amp)
    out = sfft.irfft(sfft.rfft(white) * shape, n=n)
    return Waveform(out / rms(out), sr)


def babble(speakers, n_voices: int = 8, duration_s: float = 10.0, seed: int = 0,
           sample_rate_hz: int = None) -> Waveform:
    """Sum of random equal-RMS excerpts from distinct voices, unit RMS."""
    clips = [s if isinstance(s, Waveform) else Waveform(np.asarray(s), sample_rate_hz)
             for s in speakers]
    if len(clips) < n_voices:
        raise ConfigError(f"babble needs >= {n_voices} speaker clips, got {len(clips)}")
    sr = clips[0].sample_rate_hz
    if any(c.sample_rate_hz != sr for c in clips):
        raise ConfigError("speaker clips must share one sample rate")
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sr))
    picks = rng.choice(len(clips), size=n_voices, replace=False)
    out = np.zeros(n)
    for idx in picks:
        x = clips[idx].samples
        if len(x) < n:  # tile short clips
            x = np.tile(x, -(-n // len(x)))
        off = rng.integers(0, len(x) - n + 1)
        seg = x[off:off + n]
        r = rms(seg)
        if r == 0:
            raise DegenerateInputError(f"speaker clip {idx} segment has zero RMS")
        out += seg / r
    return Waveform(out / rms(out), sr)


def quantize_anchor(w: Waveform, bits: int = 4) -> Waveform:
    """Uniform midrise quantizer over [-1, 1): the low naturalness anchor."""
    if bits < 1:
        raise ConfigError("bits must be >= 1")
    step = 2.0 / (1 << bits)
    q = step * (np.floor(w.samples / step) + 0.5)
    q = np.clip(q, -1.0 + step / 2, 1.0 - step / 2)
    return Waveform(q, w.sample_rate_hz)


# ---------------------------------------------------------------------------
# training batches


def _loaded_pool(manifest: CorpusManifest, kind: str, split: str):
    entries = manifest.select(kind=kind, split=split)
    if not entries:
        raise ConfigError(f"manifest has no {kind}/{split} entries")
    return [manifest.read(e) for e in entries]


def _random_segment(w: Waveform, n: int, rng) -> np.ndarray:
    if len(w) < n:
        raise ConfigError(f"clip shorter than the requested segment ({len(w)} < {n})")
    off = rng.integers(0, len(w) - n + 1)
    return w.samples[off:off + n]


def sample_training_batch(manifest: CorpusManifest, batch: int, segment_s: float = 2.0,
                          snr_range=(-20.0, 10.0), seed: int = 0, split: str = "train"):
    """Deterministic batch of (noisy, clean) pairs for a given seed."""
    sampler = TrainingSampler(manifest, segment_s, snr_range, seed, split)
    return sampler(0, batch, np.random.default_rng(seed))


class TrainingSampler:
    """Callable (step, batch, rng) -> [(noisy, clean)] over a manifest.

    Decoded waveforms are cached in memory; draws are uniform over
    clips, offsets, and SNR. Deterministic given the trainer's seeded
    generator (single-worker contract).
    """

    def __init__(self, manifest: CorpusManifest, segment_s: float = 2.0,
                 snr_range=(-20.0, 10.0), seed: int = 0, split: str = "train"):
        self.speech = _loaded_pool(manifest, "speech", split)
        self.noise = _loaded_pool(manifest, "noise", split)
        sr = self.speech[0].sample_rate_hz
        if any(w.sample_rate_hz != sr for w in self.speech + self.noise):
            raise ConfigError("corpus clips must share one sample rate")
        self.sample_rate_hz = sr
        self.segment = int(round(segment_s * sr))
        self.snr_range = tuple(snr_range)
        self.seed = seed

    def __call__(self, step: int, batch: int, rng=None):
        rng = rng or np.random.default_rng((self.seed, step))
        out = []
        tries = 0
        while len(out) < batch:
            tries += 1
            if tries > 20 * batch:
                raise DegenerateInputError("corpus keeps yielding zero-RMS segments")
            s = _random_segment(self.speech[rng.integers(len(self.speech))], self.segment, rng)
            n = _random_segment(self.noise[rng.integers(len(self.noise))], self.segment, rng)
            if rms(s) == 0 or rms(n) == 0:  # all-pause stretches in toy speech
                continue
            mix = mix_at_snr(s, n, rng.uniform(*self.snr_range))
            out.append((mix.mixture, mix.clean))
        return out


# ---------------------------------------------------------------------------
# built-in toy corpus


def build_toy_corpus(root, n_speech: int = 120, sample_rate_hz: int = 8000,
                     clip_s: float = 4.0, seed: int = 0, n_babble_voices: int = 8,
                     noise_s: float = 40.0) -> Path:
    """Write a self-contained corpus: toy speech + SSN and babble noise.

    Speech is split train/val/test 80/10/10; the noise files are built
    from speech excerpts that stay out of the val/test speech pool.
    Returns the manifest path.
    """
    root = Path(root)
    (root / "speech").mkdir(parents=True, exist_ok=True)
    (root / "noise").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    entries = []

    speech_clips = []
    for i in range(n_speech):
        x = toysignals.toy_speech(clip_s, rng, sample_rate_hz)
        w = Waveform(x, sample_rate_hz)
        speech_clips.append(w)
        rel = f"speech/clip{i:04d}.wav"
        write_wav(w, root / rel, encoding="float32")
        split = "train" if i < int(0.8 * n_speech) else (
            "val" if i < int(0.9 * n_speech) else "test")
        entries.append(CorpusEntry(rel, "speech", split, clip_s))

    def headroom(w: Waveform) -> Waveform:
        scale = min(0.3, 0.9 / np.max(np.abs(w.samples)))
        return Waveform(scale * w.samples, w.sample_rate_hz)

    train_pool = speech_clips[: int(0.8 * n_speech)]
    ssn_refs = train_pool[: min(16, len(train_pool))]
    for split, tag in (("train", "a"), ("val", "b"), ("test", "c")):
        ssn = speech_shaped_noise(ssn_refs, noise_s, seed=seed + ord(tag))
        rel = f"noise/ssn_{tag}.wav"
        write_wav(headroom(ssn), root / rel, encoding="float32")
        entries.append(CorpusEntry(rel, "noise", split, noise_s, label="ssn"))

        voices = [Waveform(toysignals.toy_speech(
                      noise_s / 2, np.random.default_rng((seed, ord(tag), v)),
                      sample_rate_hz), sample_rate_hz)
                  for v in range(n_babble_voices)]
        bab = babble(voices, n_voices=n_babble_voices, duration_s=noise_s, seed=seed + ord(tag))
        rel = f"noise/babble_{tag}.wav"
        write_wav(headroom(bab), root / rel, encoding="float32")
        entries.append(CorpusEntry(rel, "noise", split, noise_s, label="babble"))

    manifest = CorpusManifest(root, entries)
    manifest_path = root / "manifest.json"
    manifest.save(manifest_path)
    return manifest_path
