"""Headphone screening: three-tone trials with an antiphase decoy.

Each trial is one stereo WAV holding three 200 Hz tone bursts. One tone
is attenuated 6 dB (the correct "quietest" answer under headphones);
another is presented in antiphase across the stereo channels, which
cancels acoustically over loudspeakers and tricks speaker listeners
into picking it instead.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

N_TRIALS = 6
PASS_THRESHOLD = 5
_SR = 20000
_TONE_HZ = 200.0
_TONE_S = 0.7
_GAP_S = 0.25
_LEVEL = 0.4
_ATTEN_DB = -6.0


def write_stereo_wav(left: np.ndarray, right: np.ndarray, sample_rate: int, path):
    """Minimal stereo PCM16 writer (listening-test WAVs only)."""
    pcm = np.empty(left.size * 2, dtype="<i2")
    pcm[0::2] = np.clip(np.round(left * 32768.0), -32768, 32767).astype("<i2")
    pcm[1::2] = np.clip(np.round(right * 32768.0), -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    with open(path, "wb") as f:
        f.write(b"RIFF")
        f.write(struct.pack("<I", 36 + len(payload)))
        f.write(b"WAVE")
        f.write(b"fmt ")
        f.write(struct.pack("<IHHIIHH", 16, 1, 2, sample_rate, sample_rate * 4, 4, 16))
        f.write(b"data")
        f.write(struct.pack("<I", len(payload)))
        f.write(payload)


def _tone(n, phase=0.0):
    t = np.arange(n) / _SR
    ramp = np.minimum(1.0, np.minimum(t, t[::-1]) / 0.02)
    return _LEVEL * np.sin(2 * np.pi * _TONE_HZ * t + phase) * ramp


def make_screening_trial(quiet_index: int, antiphase_index: int, path) -> None:
    """Write one stereo trial; tone `quiet_index` is -6 dB, `antiphase_index` inverted in R."""
    n_tone = int(_TONE_S * _SR)
    n_gap = int(_GAP_S * _SR)
    left, right = [], []
    gain_quiet = 10.0 ** (_ATTEN_DB / 20.0)
    for i in range(3):
        tone = _tone(n_tone)
        if i == quiet_index:
            tone = tone * gain_quiet
        l, r = tone, tone.copy()
        if i == antiphase_index:
            r = -r
        left += [l, np.zeros(n_gap)]
        right += [r, np.zeros(n_gap)]
    write_stereo_wav(np.concatenate(left), np.concatenate(right), _SR, path)


def plan_screening(session_seed: int) -> list:
    """Deterministic six-trial plan for a session seed.

    Each entry: {"index", "file", "quiet", "antiphase"}; the correct
    answer is `quiet`.
    """
    rng = np.random.default_rng(session_seed)
    trials = []
    for i in range(N_TRIALS):
        quiet = int(rng.integers(3))
        antiphase = int((quiet + 1 + rng.integers(2)) % 3)  # always a different slot
        trials.append({"index": i, "file": f"screen_{i}.wav",
                       "quiet": quiet, "antiphase": antiphase})
    return trials


def assign_screening(session_seed: int, out_dir) -> list:
    """Plan the session's screening trials and write their stereo WAVs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = plan_screening(session_seed)
    for item in plan:
        path = out_dir / item["file"]
        if not path.exists():
            make_screening_trial(item["quiet"], item["antiphase"], path)
    return plan


def grade(answers, keys) -> tuple:
    """(n_correct, passed) for a full answer sheet."""
    if len(answers) != len(keys):
        raise ValueError(f"expected {len(keys)} answers, got {len(answers)}")
    correct = sum(1 for a, k in zip(answers, keys) if int(a) == k["quiet"])
    return correct, correct >= PASS_THRESHOLD
