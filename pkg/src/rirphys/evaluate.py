"""Per-item loss variants (SB, SSB, CSB, 3B) and the EDC-Fourier metric."""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .ctf import CtfConfig, default_filter_len, estimate_ctf
from .decay import MASK_THRESHOLD_DB, coherence_loss, metric_edc_fourier
from .rir_spec import modeling_error, rir_estimate, spectral_subtraction
from .stft import StftConfig, Waveform, stft

__all__ = ["VARIANTS", "evaluate_variant", "summarize"]

VARIANTS = ("SB", "SSB", "CSB", "3B", "EDC-Fourier")


def evaluate_variant(variant: str, dry: Waveform, rir: Waveform, wet: Waveform,
                     dry_estimate: Waveform | None = None, stft_cfg: StftConfig | None = None,
                     filter_len: int | None = None, ridge: float = 0.0,
                     threshold: float = MASK_THRESHOLD_DB, eps_floor: float = 1e-8) -> float:
    """Score one item under ``variant``; ``dry_estimate`` defaults to the dry signal itself.

    ``filter_len`` defaults to the frames spanned by the RIR.  The crossband
    count is set by the variant (3B uses 1, the others 0).
    """
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    x_hat = dry if dry_estimate is None else dry_estimate
    if variant == "EDC-Fourier":
        return metric_edc_fourier(wet, x_hat, rir, eps_floor, threshold)

    stft_cfg = stft_cfg or StftConfig()
    if filter_len is None:
        filter_len = default_filter_len(rir.duration, stft_cfg, rir.sample_rate)
    ctf_cfg = CtfConfig(crossbands=1 if variant == "3B" else 0, filter_len=filter_len, ridge=ridge)

    Y = stft(wet, stft_cfg)
    H = stft(rir, stft_cfg)
    I_hat = rir_estimate(estimate_ctf(stft(x_hat, stft_cfg), Y, ctf_cfg))
    if variant in ("SB", "3B"):
        return coherence_loss(I_hat, H, threshold)

    X_is_hat = dry_estimate is None or np.array_equal(dry_estimate.samples, dry.samples)
    if X_is_hat:
        I_ref = replace(I_hat, source="from_dry_oracle")
    else:
        I_ref = rir_estimate(estimate_ctf(stft(dry, stft_cfg), Y, ctf_cfg), source="from_dry_oracle")
    if variant == "SSB":
        return coherence_loss(I_hat, I_ref, threshold)
    E = modeling_error(I_ref, H)
    return coherence_loss(spectral_subtraction(I_hat, E), spectral_subtraction(I_ref, E), threshold)


def summarize(values) -> tuple[float, float, int]:
    """Mean and population std over finite values, with their count."""
    v = np.asarray([x for x in values if math.isfinite(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    return float(v.mean()), float(v.std()), int(v.size)
