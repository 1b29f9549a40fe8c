"""Convolutive transfer function (CTF) estimation in the STFT domain.

For every output band ``f`` the reverberant row ``Y[f]`` is modeled as a sum
of time convolutions of the dry rows ``X[f']`` for ``f'`` in
``[f - F', f + F']``.  The filters are the least-squares solution of a stacked
Toeplitz system, solved with a column-pivoted QR factorization.
"""

from __future__ import annotations

import csv
import math
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .stft import Spectrogram, StftConfig

__all__ = [
    "RankConditionError",
    "CtfConfig",
    "CtfFilterBank",
    "default_filter_len",
    "build_toeplitz",
    "stacked_toeplitz",
    "qr_lstsq",
    "estimate_ctf",
    "apply_ctf",
    "ls_residual",
    "save_bank",
    "load_bank",
    "write_bank_csv",
]


class RankConditionError(ValueError):
    """Raised when ``(2F'+1) * T_h >= T_y``, i.e. the system cannot be full rank."""


@dataclass(frozen=True)
class CtfConfig:
    crossbands: int = 0
    filter_len: int = 1
    ridge: float = 0.0

    def __post_init__(self):
        if self.crossbands < 0:
            raise ValueError("crossbands must be nonnegative")
        if self.filter_len < 1:
            raise ValueError("filter_len must be at least one frame")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    @property
    def width(self) -> int:
        return 2 * self.crossbands + 1

    @property
    def n_unknowns(self) -> int:
        return self.width * self.filter_len

    def check_rank(self, n_frames_y: int) -> None:
        if self.n_unknowns >= n_frames_y:
            raise RankConditionError(
                f"(2F'+1)*T_h = {self.width}*{self.filter_len} = {self.n_unknowns} "
                f"must be < T_y = {n_frames_y}"
            )


def default_filter_len(rir_seconds: float, stft_cfg: StftConfig, sample_rate: int = 16000) -> int:
    """Frames spanned by an RIR of the given duration plus one analysis window."""
    return math.ceil((rir_seconds * sample_rate + stft_cfg.win_len) / stft_cfg.hop)


@dataclass
class CtfFilterBank:
    """Crossband filters, ``filters[f, f' - f + F', t'] = C[f, f', t']``.

    Rows for ``f'`` outside ``[0, F)`` are kept at zero.  ``deficient`` flags
    bands whose stacked Toeplitz matrix was numerically rank deficient.
    """

    filters: np.ndarray
    config: CtfConfig
    deficient: np.ndarray = field(default=None)

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=complex)
        F, width, T_h = self.filters.shape
        if width != self.config.width or T_h != self.config.filter_len:
            raise ValueError(
                f"filter tensor shape {self.filters.shape} does not match {self.config}"
            )
        if self.deficient is None:
            self.deficient = np.zeros(F, dtype=bool)
        if not np.all(np.isfinite(self.filters)):
            raise ValueError("filter bank contains non-finite entries")

    @property
    def n_bins(self) -> int:
        return self.filters.shape[0]

    def sources(self, f: int) -> np.ndarray:
        """Input bands ``f'`` feeding output band ``f`` (edge bands are narrower)."""
        return _sources(f, self.config.crossbands, self.n_bins)

    @classmethod
    def identity(cls, n_bins: int, cfg: CtfConfig | None = None) -> "CtfFilterBank":
        cfg = cfg or CtfConfig()
        filters = np.zeros((n_bins, cfg.width, cfg.filter_len), dtype=complex)
        filters[:, cfg.crossbands, 0] = 1.0
        return cls(filters, cfg)


def _sources(f: int, crossbands: int, n_bins: int) -> np.ndarray:
    return np.arange(max(f - crossbands, 0), min(f + crossbands, n_bins - 1) + 1)


def _bins(S) -> np.ndarray:
    return S.bins if isinstance(S, Spectrogram) else np.asarray(S, dtype=complex)


def _toeplitz_row(row: np.ndarray, T_h: int, T_y: int) -> np.ndarray:
    lag = np.arange(T_y)[:, None] - np.arange(T_h)[None, :]
    valid = (lag >= 0) & (lag < row.size)
    out = np.zeros((T_y, T_h), dtype=complex)
    out[valid] = row[lag[valid]]
    return out


def build_toeplitz(X, f: int, T_h: int, T_y: int) -> np.ndarray:
    """``T_y x T_h`` delay matrix of band ``f``: entry ``(t, t') = X[f, t - t']``."""
    bins = _bins(X)
    if not 0 <= f < bins.shape[0]:
        raise IndexError(f"band {f} out of range [0, {bins.shape[0]})")
    if T_h < 1 or T_y < 1:
        raise ValueError("T_h and T_y must be positive")
    return _toeplitz_row(bins[f], T_h, T_y)


def stacked_toeplitz(X, f: int, crossbands: int, T_h: int, T_y: int) -> tuple[np.ndarray, np.ndarray]:
    """Column-wise concatenation of the Toeplitz blocks of the source bands of ``f``."""
    bins = _bins(X)
    src = _sources(f, crossbands, bins.shape[0])
    blocks = [build_toeplitz(bins, fp, T_h, T_y) for fp in src]
    return np.hstack(blocks), src


def qr_lstsq(A: np.ndarray, b: np.ndarray, rcond: float | None = None) -> tuple[np.ndarray, int]:
    """Least squares by column-pivoted QR; minimum-norm when ``A`` is rank deficient.

    Returns ``(x, rank)``.  A rank-deficient system is finished with a second
    QR of the leading row block (complete orthogonal decomposition).
    """
    m, n = A.shape
    Q, R, piv = linalg.qr(A, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if rcond is None:
        rcond = max(m, n) * np.finfo(float).eps
    if diag.size == 0 or diag[0] == 0.0:
        return np.zeros(n, dtype=np.result_type(A, b)), 0
    rank = int(np.sum(diag > rcond * diag[0]))
    qb = Q[:, :rank].conj().T @ b
    z = np.zeros(n, dtype=np.result_type(A, b, complex))
    if rank == n:
        z = linalg.solve_triangular(R, qb)
    else:
        Z, T = linalg.qr(R[:rank].conj().T, mode="economic")
        w = linalg.solve_triangular(T, qb, trans="C")
        z = Z @ w
    x = np.empty_like(z)
    x[piv] = z
    return x, rank


def _check_pair(Xb: np.ndarray, Yb: np.ndarray, X, Y) -> None:
    if Xb.shape[0] != Yb.shape[0]:
        raise ValueError(f"frequency rows differ: {Xb.shape[0]} vs {Yb.shape[0]}")
    if isinstance(X, Spectrogram) and isinstance(Y, Spectrogram) and X.config != Y.config:
        raise ValueError("dry and wet spectrograms use different STFT configs")


def estimate_ctf(X, Y, cfg: CtfConfig) -> CtfFilterBank:
    """Per-band least-squares CTF fit ``argmin_C ||Xbar_f C - Y_f||``."""
    Xb, Yb = _bins(X), _bins(Y)
    _check_pair(Xb, Yb, X, Y)
    F, T_y = Yb.shape
    cfg.check_rank(T_y)
    T_h = cfg.filter_len
    filters = np.zeros((F, cfg.width, T_h), dtype=complex)
    deficient = np.zeros(F, dtype=bool)
    for f in range(F):
        A, src = stacked_toeplitz(Xb, f, cfg.crossbands, T_h, T_y)
        b = Yb[f]
        if cfg.ridge > 0:
            A = np.vstack([A, math.sqrt(cfg.ridge) * np.eye(A.shape[1])])
            b = np.concatenate([b, np.zeros(A.shape[1])])
        c, rank = qr_lstsq(A, b)
        deficient[f] = rank < A.shape[1]
        filters[f, src - f + cfg.crossbands] = c.reshape(src.size, T_h)
    return CtfFilterBank(filters, cfg, deficient)


def apply_ctf(bank: CtfFilterBank, X, n_frames: int | None = None):
    """Crossband convolution ``Yhat[f, t] = sum C[f, f', t'] X[f', t - t']``.

    Output has ``n_frames`` frames (default ``T_x + T_h - 1``).  Returns a
    :class:`Spectrogram` when ``X`` is one, otherwise an array.
    """
    Xb = _bins(X)
    F, T_x = Xb.shape
    if F != bank.n_bins:
        raise ValueError(f"bank has {bank.n_bins} bands, spectrogram has {F}")
    K, T_h = bank.config.crossbands, bank.config.filter_len
    if n_frames is None:
        n_frames = T_x + T_h - 1
    out = np.zeros((F, n_frames), dtype=complex)
    for d in range(-K, K + 1):
        lo, hi = max(0, -d), min(F, F - d)
        if lo >= hi:
            continue
        src = Xb[lo + d:hi + d]
        for tp in range(min(T_h, n_frames)):
            n = min(T_x, n_frames - tp)
            out[lo:hi, tp:tp + n] += bank.filters[lo:hi, d + K, tp, None] * src[:, :n]
    if isinstance(X, Spectrogram):
        return Spectrogram(out, X.config, sample_rate=X.sample_rate)
    return out


def ls_residual(X, Y, bank: CtfFilterBank) -> np.ndarray:
    """Per-band residual norms ``||Xbar_f C_f - Y_f||_2``."""
    Xb, Yb = _bins(X), _bins(Y)
    _check_pair(Xb, Yb, X, Y)
    pred = apply_ctf(bank, Xb, n_frames=Yb.shape[1])
    return np.linalg.norm(pred - Yb, axis=1)


# Binary layout: little-endian uint32 header (F, F', T_h) followed by
# F * (2F'+1) * T_h complex entries in C order [f, f'-f+F', t'], each stored
# as float64 real part then float64 imaginary part.
_HEADER = struct.Struct("<3I")


def save_bank(bank: CtfFilterBank, path: str | os.PathLike) -> None:
    F, _, T_h = bank.filters.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(F, bank.config.crossbands, T_h))
        fh.write(bank.filters.astype("<c16").tobytes())


def load_bank(path: str | os.PathLike, ridge: float = 0.0) -> CtfFilterBank:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated filter-bank header")
    F, K, T_h = _HEADER.unpack_from(raw)
    cfg = CtfConfig(crossbands=K, filter_len=T_h, ridge=ridge)
    payload = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    expected = F * cfg.width * T_h
    if payload.size != expected:
        raise ValueError(f"{path}: expected {expected} coefficients, found {payload.size}")
    return CtfFilterBank(payload.reshape(F, cfg.width, T_h).astype(complex), cfg)


def write_bank_csv(bank: CtfFilterBank, path: str | os.PathLike) -> None:
    """One row per in-range ``(f, f', t')``: ``f,f_src,t,re,im``."""
    K = bank.config.crossbands
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["f", "f_src", "t", "re", "im"])
        for f in range(bank.n_bins):
            for fp in bank.sources(f):
                for t, c in enumerate(bank.filters[f, fp - f + K]):
                    w.writerow([f, fp, t, repr(float(c.real)), repr(float(c.imag))])
