"""STFT-domain RIR estimation and energy-decay losses for dereverberation."""

__version__ = "0.1.0"

from .ctf import CtfConfig, CtfFilterBank, RankConditionError, apply_ctf, estimate_ctf, ls_residual
from .decay import (
    EnergyDecayCurve,
    EnergyDecayRelief,
    coherence_loss,
    edc_time,
    edr,
    edr_db,
    fourier_deconvolve,
    metric_edc_fourier,
    metric_edr_crossband,
    metric_edr_subband,
    rt60_from_edc,
)
from .grad import BalanceWeights, LossGradient, balance_weights, coherence_loss_grad, physics_loss
from .rir_spec import ModelingError, RirSpectrogramEstimate, modeling_error, rir_estimate, spectral_subtraction
from .room import RoomSpec, SamplingRegime, align_direct_path, convolve, sample_room, synth_rir_ism, synth_rir_polack
from .stft import Spectrogram, StftConfig, Waveform, istft, stft
