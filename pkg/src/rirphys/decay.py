"""Energy decay relief and curves, the masked decay loss, and evaluation metrics."""

from __future__ import annotations

import csv
import dataclasses
import os
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .ctf import CtfConfig, estimate_ctf
from .rir_spec import RirSpectrogramEstimate, rir_estimate
from .stft import Spectrogram, Waveform

__all__ = [
    "FLOOR_DB",
    "MASK_THRESHOLD_DB",
    "EnergyDecayRelief",
    "EnergyDecayCurve",
    "edr",
    "edr_db",
    "masked_decay_loss",
    "coherence_loss",
    "fourier_deconvolve",
    "edc_time",
    "edc_loss",
    "metric_edc_fourier",
    "metric_edr_subband",
    "metric_edr_crossband",
    "rt60_from_edc",
    "write_edr_csv",
]

FLOOR_DB = -300.0
MASK_THRESHOLD_DB = -20.0


@dataclass
class EnergyDecayRelief:
    """dB-scaled EDR ``values_db`` (F x T) with the target-side ``mask``.

    ``valid`` marks bands with nonzero energy; invalid rows sit at the floor
    and never pass the mask.
    """

    values_db: np.ndarray
    mask: np.ndarray
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.values_db.shape


@dataclass
class EnergyDecayCurve:
    values_db: np.ndarray
    sample_rate: int = 16000


def _complex_bins(R) -> np.ndarray:
    if isinstance(R, (Spectrogram, RirSpectrogramEstimate)):
        return R.bins
    return np.asarray(R)


def _deficient(R) -> np.ndarray | None:
    return getattr(R, "deficient", None)


def edr(R) -> np.ndarray:
    """Backward cumulative energy along time, per band."""
    P = np.abs(_complex_bins(R)) ** 2
    if P.ndim != 2 or P.size == 0:
        raise ValueError("EDR needs a nonempty (F, T) array")
    return np.cumsum(P[:, ::-1], axis=1)[:, ::-1]


def _to_db(E: np.ndarray, threshold: float, floor: float) -> EnergyDecayRelief:
    valid = E[:, 0] > 0
    if not valid.any():
        raise ValueError("all bands have zero energy")
    values = np.full(E.shape, floor)
    with np.errstate(divide="ignore"):
        values[valid] = np.maximum(10 * np.log10(E[valid] / E[valid, :1]), floor)
    mask = (values > threshold) & valid[:, None]
    return EnergyDecayRelief(values, mask, valid)


def edr_db(R, threshold: float = MASK_THRESHOLD_DB, floor: float = FLOOR_DB) -> EnergyDecayRelief:
    """EDR in dB relative to frame 0; ``mask`` keeps bins above ``threshold``."""
    return _to_db(edr(R), threshold, floor)


def masked_decay_loss(
    estimate: EnergyDecayRelief,
    target: EnergyDecayRelief,
    reduction: str = "sum",
    band_mask: np.ndarray | None = None,
) -> float:
    """Squared dB error summed (or averaged) over bins where the target passes its mask.

    Both reliefs are cut to their common number of frames.  Bands invalid on
    either side, or false in ``band_mask``, are left out.
    """
    T = min(estimate.shape[1], target.shape[1])
    if estimate.shape[0] != target.shape[0]:
        raise ValueError(f"band count mismatch: {estimate.shape[0]} vs {target.shape[0]}")
    keep = target.mask[:, :T] & estimate.valid[:, None]
    if band_mask is not None:
        keep &= np.asarray(band_mask, dtype=bool)[:, None]
    n = int(keep.sum())
    if n == 0:
        raise ValueError("no time-frequency bin passes the mask")
    diff = estimate.values_db[:, :T] - target.values_db[:, :T]
    total = float(np.sum(diff[keep] ** 2))
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / n
    raise ValueError(f"unknown reduction {reduction!r}")


def coherence_loss(
    R_hat,
    R,
    threshold: float = MASK_THRESHOLD_DB,
    reduction: str = "sum",
    band_mask: np.ndarray | None = None,
) -> float:
    """Masked squared error between the dB EDRs of an estimate and a target.

    Inputs are truncated to their common frame count before the EDRs are
    taken.  Bands flagged as rank deficient on either input are excluded.
    """
    A, B = _complex_bins(R_hat), _complex_bins(R)
    T = min(A.shape[1], B.shape[1])
    keep = np.ones(A.shape[0], dtype=bool) if band_mask is None else np.asarray(band_mask, bool).copy()
    for src in (R_hat, R):
        flags = _deficient(src)
        if flags is not None:
            keep &= ~flags
    est = edr_db(A[:, :T], threshold)
    tgt = edr_db(B[:, :T], threshold)
    return masked_decay_loss(est, tgt, reduction, keep)


def _samples(w) -> np.ndarray:
    return w.samples if isinstance(w, Waveform) else np.asarray(w, dtype=float)


def fourier_deconvolve(y, x, eps_floor: float = 1e-8) -> Waveform:
    """``IDFT[DFT(y) / DFT(x)]`` with Tikhonov division on bins below ``eps_floor * max|DFT(x)|``.

    The DFT length is the next fast size >= ``len(y)``; the result is cut to
    ``len(y)`` samples.
    """
    ys, xs = _samples(y), _samples(x)
    if xs.size > ys.size:
        raise ValueError("dry signal longer than wet signal")
    if not np.any(xs):
        raise ValueError("dry signal is identically zero")
    n = sfft.next_fast_len(ys.size, real=True)
    Xf = np.fft.rfft(xs, n)
    Yf = np.fft.rfft(ys, n)
    mag = np.abs(Xf)
    eps = eps_floor * mag.max()
    weak = mag < eps
    if eps == 0 and np.any(mag == 0):
        raise ZeroDivisionError("dry spectrum has exact zeros and eps_floor is 0")
    Hf = np.empty_like(Yf)
    strong = ~weak
    Hf[strong] = Yf[strong] / Xf[strong]
    Hf[weak] = np.conj(Xf[weak]) * Yf[weak] / (mag[weak] ** 2 + eps**2)
    h = np.fft.irfft(Hf, n)[: ys.size]
    fs = y.sample_rate if isinstance(y, Waveform) else 16000
    return Waveform(h, fs)


def _edc_db(r: np.ndarray, floor: float) -> np.ndarray:
    energy = np.cumsum((r**2)[::-1])[::-1]
    if energy[0] <= 0:
        raise ValueError("signal has zero energy")
    with np.errstate(divide="ignore"):
        return np.maximum(10 * np.log10(energy / energy[0]), floor)


def edc_time(h, floor: float = FLOOR_DB) -> EnergyDecayCurve:
    """Schroeder backward-integrated energy in dB relative to ``n = 0``."""
    fs = h.sample_rate if isinstance(h, Waveform) else 16000
    return EnergyDecayCurve(_edc_db(_samples(h), floor), fs)


def edc_loss(r_hat, r, threshold: float = MASK_THRESHOLD_DB, reduction: str = "mean") -> float:
    """Masked squared error between time-domain EDCs after cutting to the shorter signal."""
    a, b = _samples(r_hat), _samples(r)
    n = min(a.size, b.size)
    est, tgt = _edc_db(a[:n], FLOOR_DB), _edc_db(b[:n], FLOOR_DB)
    keep = tgt > threshold
    sq = (est[keep] - tgt[keep]) ** 2
    if reduction == "sum":
        return float(sq.sum())
    if reduction == "mean":
        return float(sq.mean())
    raise ValueError(f"unknown reduction {reduction!r}")


def metric_edc_fourier(y, x, h, eps_floor: float = 1e-8, threshold: float = MASK_THRESHOLD_DB,
                       reduction: str = "mean") -> float:
    return edc_loss(fourier_deconvolve(y, x, eps_floor), h, threshold, reduction)


def _edr_metric(X, Y, H, cfg: CtfConfig, crossbands: int, threshold: float, reduction: str) -> float:
    bank = estimate_ctf(X, Y, dataclasses.replace(cfg, crossbands=crossbands))
    return coherence_loss(rir_estimate(bank), H, threshold, reduction)


def metric_edr_subband(X, Y, H, cfg: CtfConfig, threshold: float = MASK_THRESHOLD_DB,
                       reduction: str = "sum") -> float:
    return _edr_metric(X, Y, H, cfg, 0, threshold, reduction)


def metric_edr_crossband(X, Y, H, cfg: CtfConfig, threshold: float = MASK_THRESHOLD_DB,
                         reduction: str = "sum") -> float:
    return _edr_metric(X, Y, H, cfg, 1, threshold, reduction)


def rt60_from_edc(edc: EnergyDecayCurve | np.ndarray, sample_rate: int | None = None,
                  start_db: float = -5.0, stop_db: float = -25.0) -> float:
    """Reverberation time from a line fit over the ``start_db..stop_db`` span of an EDC."""
    if isinstance(edc, EnergyDecayCurve):
        values = edc.values_db
        sample_rate = sample_rate or edc.sample_rate
    else:
        values = np.asarray(edc, dtype=float)
    if sample_rate is None:
        raise ValueError("sample_rate is required for a bare EDC array")
    below_stop = np.flatnonzero(values <= stop_db)
    if below_stop.size == 0:
        raise ValueError(f"energy decay never reaches {stop_db} dB")
    i0 = int(np.flatnonzero(values <= start_db)[0])
    i1 = int(below_stop[0])
    if i1 - i0 < 2:
        # too few samples in the span for a line fit
        raise ValueError("decay span too short to fit")
    n = np.arange(i0, i1 + 1)
    slope, _ = np.polyfit(n / sample_rate, values[i0:i1 + 1], 1)
    if slope >= 0:
        raise ValueError("energy decay curve is not decaying")
    return -60.0 / slope


def write_edr_csv(relief: EnergyDecayRelief, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "t", "edr_db", "mask"])
        F, T = relief.shape
        for f in range(F):
            for t in range(T):
                w.writerow([f, t, f"{relief.values_db[f, t]:.6f}", int(relief.mask[f, t])])
