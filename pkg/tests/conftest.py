import numpy as np
import pytest

from denoisekit import datamix
from denoisekit.audio import Waveform
from denoisekit import toysignals


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Small shared corpus: 40 toy-speech clips + SSN/babble noise at 8 kHz."""
    root = tmp_path_factory.mktemp("corpus")
    path = datamix.build_toy_corpus(root, n_speech=40, sample_rate_hz=8000,
                                    clip_s=3.0, seed=7, noise_s=20.0)
    return datamix.CorpusManifest.load(path)


@pytest.fixture(scope="session")
def speech_10k():
    """A few seconds of toy speech at the STOI processing rate."""
    return Waveform(toysignals.toy_speech(4.0, np.random.default_rng(1), 10000), 10000)
