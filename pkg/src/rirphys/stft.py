"""Short-time Fourier analysis and overlap-add synthesis.

Frames are centered: ``win_len // 2`` zeros are prepended so that frame 0 is
centered on sample 0.  With a periodic Hann window the window peak then sits
exactly on the origin, so a unit impulse at ``n = 0`` has the spectrum
``(-1)**f`` in frame 0.  Analysis is unscaled; the ``1/N`` of the inverse DFT
is applied at synthesis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import signal

__all__ = [
    "StftConfig",
    "Waveform",
    "Spectrogram",
    "stft",
    "istft",
    "num_frames",
]


@dataclass(frozen=True)
class StftConfig:
    win_len: int = 512
    hop: int = 256
    window: str = "hann"
    fft_len: int | None = None
    centered: bool = True

    def __post_init__(self):
        if self.fft_len is None:
            object.__setattr__(self, "fft_len", self.win_len)
        self.validate()

    @property
    def n_bins(self) -> int:
        return self.fft_len // 2 + 1

    @property
    def pad(self) -> int:
        return self.win_len // 2 if self.centered else 0

    def window_array(self) -> np.ndarray:
        # fftbins=True gives the periodic (DFT-even) variant
        return signal.get_window(self.window, self.win_len, fftbins=True)

    def validate(self) -> None:
        if self.win_len <= 0 or self.win_len % 2:
            raise ValueError(f"win_len must be a positive even integer, got {self.win_len}")
        if self.hop <= 0 or self.win_len % self.hop:
            raise ValueError(f"hop {self.hop} must divide win_len {self.win_len}")
        if self.fft_len != self.win_len:
            raise ValueError("fft_len must equal win_len")
        try:
            win = self.window_array()
        except ValueError as exc:
            raise ValueError(f"unknown window {self.window!r}") from exc
        if not signal.check_COLA(win, self.win_len, self.win_len - self.hop):
            raise ValueError(
                f"{self.window} window of length {self.win_len} is not COLA at hop {self.hop}"
            )


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 1:
            raise ValueError("waveform must be one-dimensional")
        if self.samples.size == 0:
            raise ValueError("waveform is empty")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass
class Spectrogram:
    """Complex one-sided STFT coefficients, shape ``(F, T)``.

    ``length`` is the number of signal samples the frames were computed from,
    when known; :func:`istft` trims its output to it.
    """

    bins: np.ndarray
    config: StftConfig = field(default_factory=StftConfig)
    length: int | None = None
    sample_rate: int = 16000

    def __post_init__(self):
        self.bins = np.asarray(self.bins, dtype=complex)
        if self.bins.ndim != 2:
            raise ValueError("spectrogram bins must be a 2-D (F, T) array")
        if self.bins.shape[0] != self.config.n_bins:
            raise ValueError(
                f"expected {self.config.n_bins} frequency rows, got {self.bins.shape[0]}"
            )

    @property
    def n_bins(self) -> int:
        return self.bins.shape[0]

    @property
    def n_frames(self) -> int:
        return self.bins.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.bins.shape


def num_frames(n_samples: int, cfg: StftConfig) -> int:
    """Frames needed so every sample is covered by a full overlap-add sum."""
    return math.ceil((n_samples + cfg.pad) / cfg.hop)


def _as_samples(w) -> tuple[np.ndarray, int]:
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate
    return Waveform(w).samples, 16000


def stft(w: Waveform | np.ndarray, cfg: StftConfig | None = None) -> Spectrogram:
    cfg = cfg or StftConfig()
    x, fs = _as_samples(w)
    n = x.size
    n_fr = num_frames(n, cfg)
    total = (n_fr - 1) * cfg.hop + cfg.win_len
    padded = np.zeros(total)
    padded[cfg.pad:cfg.pad + n] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.win_len)[:: cfg.hop]
    bins = np.fft.rfft(frames * cfg.window_array(), n=cfg.fft_len, axis=-1).T
    return Spectrogram(bins, cfg, length=n, sample_rate=fs)


def istft(S: Spectrogram, length: int | None = None) -> Waveform:
    """Overlap-add synthesis normalized by the summed analysis window.

    Without a known ``length`` the output keeps the trailing padding.
    """
    cfg = S.config
    if S.bins.shape[0] != cfg.n_bins:
        raise ValueError("spectrogram rows do not match its STFT config")
    n_fr = S.n_frames
    if n_fr == 0:
        raise ValueError("spectrogram has no frames")
    frames = np.fft.irfft(S.bins.T, n=cfg.fft_len, axis=-1)[:, : cfg.win_len]
    total = (n_fr - 1) * cfg.hop + cfg.win_len
    out = np.zeros(total)
    norm = np.zeros(total)
    win = cfg.window_array()
    for t in range(n_fr):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.win_len)
        out[sl] += frames[t]
        norm[sl] += win
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out = out[cfg.pad:]
    if length is None:
        length = S.length
    if length is not None:
        if length > out.size:
            raise ValueError(f"requested length {length} exceeds synthesized {out.size}")
        out = out[:length]
    if out.size == 0:
        raise ValueError("synthesis produced no samples")
    return Waveform(out, S.sample_rate)
