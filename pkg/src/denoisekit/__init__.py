"""Speech enhancement at desk scale.

Wave-U-Net training under waveform, cochlear filter-bank, and deep
recognition-feature losses; objective metrics (SDR, SI-SDR, STOI); and
a MUSHRA-style listening-test service. See README.md for a tour.
"""

from .audio import Waveform, read_wav, resample, write_wav
from .cochlea import FilterBankConfig, build_filter_bank, cochleagram

__version__ = "0.1.0"

__all__ = ["Waveform", "read_wav", "write_wav", "resample",
           "FilterBankConfig", "build_filter_bank", "cochleagram", "__version__"]
