"""Gradient of the masked decay loss with respect to the dry spectrogram estimate.

The loss composes four stages: per-band least squares for the CTF, the signed
band sum giving the RIR spectrogram, the dB energy decay relief, and the
masked squared error.  The backward pass runs the adjoint of each stage; the
least-squares stage uses the sensitivity of ``C = (A^H A)^-1 A^H y`` to ``A``,
evaluated with the R factor of the QR used in the forward solve.

Gradients are returned in the real convention ``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .ctf import CtfConfig, _bins, estimate_ctf, stacked_toeplitz
from .decay import FLOOR_DB, MASK_THRESHOLD_DB, coherence_loss, edr_db
from .rir_spec import ModelingError, RirSpectrogramEstimate, rir_estimate, spectral_subtraction

__all__ = [
    "LossGradient",
    "BalanceWeights",
    "physics_loss",
    "coherence_loss_grad",
    "balance_weights",
    "random_instance",
    "gradient_check",
]

_DB = 10.0 / math.log(10.0)


@dataclass
class LossGradient:
    d_re: np.ndarray
    d_im: np.ndarray
    loss: float
    excluded: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.d_re + 1j * self.d_im


@dataclass
class BalanceWeights:
    w_d: float
    w_phi_effective: float
    grad_norm_d: float
    grad_norm_phi: float


def _target_bins(target) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(target, RirSpectrogramEstimate):
        return target.bins, target.deficient
    return _bins(target), None


def physics_loss(X_hat, Y, target, cfg: CtfConfig, threshold: float = MASK_THRESHOLD_DB,
                 correction: ModelingError | None = None, reduction: str = "sum") -> float:
    """Forward value of the loss differentiated by :func:`coherence_loss_grad`."""
    est = rir_estimate(estimate_ctf(X_hat, Y, cfg))
    if correction is not None:
        est = spectral_subtraction(est, correction)
    return coherence_loss(est, target, threshold, reduction)


def coherence_loss_grad(X_hat, Y, target, cfg: CtfConfig, threshold: float = MASK_THRESHOLD_DB,
                        correction: ModelingError | None = None,
                        reduction: str = "sum") -> LossGradient:
    """Analytic gradient of :func:`physics_loss` with respect to ``X_hat``.

    The mask is fixed by the target.  Rank-deficient bands are excluded from
    both the loss and the gradient and reported in ``excluded``.
    """
    Xb, Yb = _bins(X_hat), _bins(Y)
    F, T_x = Xb.shape
    T_y = Yb.shape[1]
    if Yb.shape[0] != F:
        raise ValueError(f"frequency rows differ: {F} vs {Yb.shape[0]}")
    cfg.check_rank(T_y)
    K, T_h = cfg.crossbands, cfg.filter_len
    tgt_bins, tgt_flags = _target_bins(target)
    if tgt_bins.shape[0] != F:
        raise ValueError("target band count differs from the spectrogram")
    T_c = min(T_h, tgt_bins.shape[1])

    # forward: per-band solves, keeping factors for the adjoint
    systems = []
    C = np.zeros((F, 2 * K + 1, T_h), dtype=complex)
    excluded = np.zeros(F, dtype=bool) if tgt_flags is None else tgt_flags.copy()
    for f in range(F):
        A, src = stacked_toeplitz(Xb, f, K, T_h, T_y)
        n = A.shape[1]
        A_solve = A
        if cfg.ridge > 0:
            A_solve = np.vstack([A, math.sqrt(cfg.ridge) * np.eye(n)])
        Q, R, piv = linalg.qr(A_solve, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        tol = max(A_solve.shape) * np.finfo(float).eps * (diag[0] if diag.size else 0.0)
        if diag.size == 0 or diag[0] == 0 or np.any(diag <= tol):
            excluded[f] = True
            systems.append(None)
            continue
        rhs = Q[:T_y].conj().T @ Yb[f]
        z = linalg.solve_triangular(R, rhs)
        c = np.empty_like(z)
        c[piv] = z
        C[f, src - f + K] = c.reshape(src.size, T_h)
        systems.append((A, R, piv, src, c))

    signs = np.where(np.arange(F) % 2, -1.0, 1.0)
    I = np.zeros((F, T_h), dtype=complex)
    for d in range(-K, K + 1):
        fp = np.arange(F) + d
        ok = (fp >= 0) & (fp < F)
        I[ok] += signs[fp[ok]][:, None] * C[ok, d + K]

    Ic = I[:, :T_c]
    P = np.abs(Ic) ** 2
    if correction is not None:
        if correction.magnitudes.shape != I.shape:
            raise ValueError("correction shape does not match the RIR estimate")
        excess = P - correction.magnitudes[:, :T_c] ** 2
        active = excess > 0
        P = np.where(active, excess, 0.0)
    E = np.cumsum(P[:, ::-1], axis=1)[:, ::-1]
    valid = E[:, 0] > 0
    tgt = edr_db(tgt_bins[:, :T_c], threshold)
    keep = tgt.mask & valid[:, None] & ~excluded[:, None]
    count = int(keep.sum())
    if count == 0:
        raise ValueError("no time-frequency bin passes the mask")

    phi = np.full(E.shape, FLOOR_DB)
    with np.errstate(divide="ignore"):
        phi[valid] = 10 * np.log10(E[valid] / E[valid, :1])
    clipped = phi < FLOOR_DB
    phi = np.maximum(phi, FLOOR_DB)
    diff = np.where(keep, phi - tgt.values_db, 0.0)
    scale = 1.0 if reduction == "sum" else 1.0 / count
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    loss = scale * float(np.sum(diff**2))

    # backward through dB, reverse cumsum, power
    g_phi = 2.0 * scale * diff
    g_phi[clipped] = 0.0
    g_E = np.zeros_like(E)
    pos = E > 0
    g_E[pos] = _DB * g_phi[pos] / E[pos]
    g_E[valid, 0] -= _DB * g_phi[valid].sum(axis=1) / E[valid, 0]
    g_P = np.cumsum(g_E, axis=1)
    if correction is not None:
        g_P = np.where(active, g_P, 0.0)
    g_I = np.zeros((F, T_h), dtype=complex)
    g_I[:, :T_c] = 2.0 * g_P * Ic

    # backward through the least-squares solves and Toeplitz structure
    g_X = np.zeros((F, T_x), dtype=complex)
    for f, sys_f in enumerate(systems):
        if sys_f is None or not np.any(g_I[f]):
            continue
        A, R, piv, src, c = sys_f
        g_c = (signs[src][:, None] * g_I[f][None, :]).ravel()
        w = linalg.solve_triangular(R, g_c[piv], trans="C")
        zz = linalg.solve_triangular(R, w)
        u = np.empty_like(zz)
        u[piv] = zz
        r = Yb[f] - A @ c
        g_A = np.outer(r, u.conj()) - np.outer(A @ u, c.conj())
        for b, fp in enumerate(src):
            block = g_A[:, b * T_h:(b + 1) * T_h]
            for tp in range(T_h):
                m = min(T_x, T_y - tp)
                if m > 0:
                    g_X[fp, :m] += block[tp:tp + m, tp]
    return LossGradient(g_X.real.copy(), g_X.imag.copy(), loss, excluded)


def balance_weights(grad_d, grad_phi, w_phi: float = 0.1) -> BalanceWeights:
    """Rescale the physics term so its gradient norm is ``w_phi`` times the reconstruction one."""
    nd = float(np.linalg.norm(np.ravel(grad_d)))
    nphi = float(np.linalg.norm(np.ravel(grad_phi)))
    if not (np.isfinite(nd) and np.isfinite(nphi)):
        raise ValueError("gradient norms must be finite")
    if nphi == 0:
        raise ValueError("physics gradient is zero; skip the term")
    if w_phi <= 0:
        raise ValueError("w_phi must be positive")
    return BalanceWeights(1.0, w_phi * nd / nphi, nd, nphi)


def random_instance(rng: np.random.Generator, n_bins: int = 9, n_frames: int = 16,
                    filter_len: int = 3, crossbands: int = 0, noise: float = 0.1):
    """Small synthetic problem ``(X_hat, Y, target)`` with a decaying target RIR spectrogram.

    ``Y`` comes from a random decaying crossband bank applied to a clean
    ``X``; ``X_hat`` is a perturbed copy of ``X`` and the target is the RIR
    estimate obtained from the clean pair.
    """
    def cplx(*shape):
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    X = cplx(n_bins, n_frames)
    cfg = CtfConfig(crossbands=crossbands, filter_len=filter_len)
    decay = 0.6 ** np.arange(filter_len)
    filters = cplx(n_bins, cfg.width, filter_len) * decay
    filters[:, crossbands] *= 3.0
    T_y = n_frames + filter_len - 1
    Y = np.zeros((n_bins, T_y), dtype=complex)
    for d in range(-crossbands, crossbands + 1):
        for f in range(n_bins):
            fp = f + d
            if 0 <= fp < n_bins:
                Y[f] += np.convolve(filters[f, d + crossbands], X[fp])[:T_y]
    Y += noise * cplx(n_bins, T_y)
    target = rir_estimate(estimate_ctf(X, Y, cfg), source="from_dry_oracle")
    X_hat = X + 0.3 * cplx(n_bins, n_frames)
    return X_hat, Y, target, cfg


def _active_set(X_hat, Y, target, cfg, threshold, correction) -> tuple:
    est = rir_estimate(estimate_ctf(X_hat, Y, cfg))
    tgt_bins, _ = _target_bins(target)
    T_c = min(cfg.filter_len, tgt_bins.shape[1])
    P = np.abs(est.bins[:, :T_c]) ** 2
    sig = [est.deficient.tobytes()]
    if correction is not None:
        P = P - correction.magnitudes[:, :T_c] ** 2
        sig.append((P > 0).tobytes())
        P = np.maximum(P, 0)
    E = np.cumsum(P[:, ::-1], axis=1)[:, ::-1]
    sig.append((E[:, 0] > 0).tobytes())
    with np.errstate(divide="ignore", invalid="ignore"):
        sig.append((10 * np.log10(E / E[:, :1]) < FLOOR_DB).tobytes())
    return tuple(sig)


def gradient_check(X_hat, Y, target, cfg: CtfConfig, n_coords: int = 40, step: float = 1e-5,
                   rng: np.random.Generator | None = None, threshold: float = MASK_THRESHOLD_DB,
                   correction: ModelingError | None = None) -> float:
    """Max relative error of the analytic gradient against central differences.

    ``n_coords`` real coordinates (real or imaginary part of one bin) are
    sampled; coordinates whose perturbation changes a clamp, floor or
    validity decision are skipped.  The relative error of each coordinate is
    taken against ``max(|analytic|, |fd|)`` floored at 1e-6 of the largest
    sampled finite difference.
    """
    rng = rng or np.random.default_rng(0)
    Xb = np.array(_bins(X_hat), dtype=complex)
    grad = coherence_loss_grad(Xb, Y, target, cfg, threshold, correction)
    F, T = Xb.shape
    base = _active_set(Xb, Y, target, cfg, threshold, correction)
    picks = rng.choice(2 * F * T, size=min(n_coords, 2 * F * T), replace=False)
    analytic, numeric = [], []
    for k in picks:
        part, idx = divmod(int(k), F * T)
        f, t = divmod(idx, T)
        unit = 1.0 if part == 0 else 1j
        vals = []
        skip = False
        for sgn in (1.0, -1.0):
            Xp = Xb.copy()
            Xp[f, t] += sgn * step * unit
            if _active_set(Xp, Y, target, cfg, threshold, correction) != base:
                skip = True
                break
            vals.append(physics_loss(Xp, Y, target, cfg, threshold, correction))
        if skip:
            continue
        numeric.append((vals[0] - vals[1]) / (2 * step))
        analytic.append(grad.d_re[f, t] if part == 0 else grad.d_im[f, t])
    if not numeric:
        return 0.0
    a, fd = np.array(analytic), np.array(numeric)
    floor = 1e-6 * max(np.max(np.abs(fd)), 1e-300)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), floor)
    return float(np.max(np.abs(a - fd) / denom))
