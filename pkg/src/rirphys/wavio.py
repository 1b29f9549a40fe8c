"""Mono WAV input/output."""

from __future__ import annotations

import os

import numpy as np
from scipy.io import wavfile

from .stft import Waveform


def read_wav(path: str | os.PathLike, expected_rate: int | None = None) -> Waveform:
    """Read a mono PCM16 or float WAV file as a float waveform in [-1, 1]."""
    rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected a mono file, got {data.shape[1]} channels")
    if data.dtype == np.int16:
        samples = data.astype(float) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(float)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if expected_rate is not None and rate != expected_rate:
        raise ValueError(f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz")
    return Waveform(samples, int(rate))


def write_wav(path: str | os.PathLike, w: Waveform) -> None:
    """Write a waveform as 32-bit float mono WAV."""
    wavfile.write(path, int(w.sample_rate), w.samples.astype(np.float32))
