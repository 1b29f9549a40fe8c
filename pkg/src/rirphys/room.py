"""Synthetic room impulse responses and room sampling.

Two generators are provided: a shoebox image-source model with a single
frequency-independent wall reflection coefficient (calibrated so the image
lattice decays at a target RT60), and a statistical exponentially decaying
noise model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal

from .stft import Waveform

__all__ = [
    "SPEED_OF_SOUND",
    "InfeasibleRegimeError",
    "RoomSpec",
    "SamplingRegime",
    "MATCHED",
    "MISMATCHED",
    "REGIMES",
    "sample_room",
    "sample_room_group",
    "eyring_absorption",
    "default_max_order",
    "calibrate_reflection",
    "synth_rir_ism",
    "polack_envelope",
    "synth_rir_polack",
    "detect_direct_path",
    "align_direct_path",
    "convolve",
]

SPEED_OF_SOUND = 343.0
# 60 dB of energy decay in nepers of amplitude: 3 * ln(10)
_DECAY_60DB = 3.0 * math.log(10.0)


class InfeasibleRegimeError(ValueError):
    pass


@dataclass(frozen=True)
class RoomSpec:
    dims: tuple[float, float, float]
    rt60_target: float
    source_pos: tuple[float, float, float]
    mic_pos: tuple[float, float, float]
    sample_rate: int = 16000
    max_order: int | None = None

    @property
    def distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.source_pos, self.mic_pos)))

    @property
    def volume(self) -> float:
        return float(np.prod(self.dims))

    @property
    def surface(self) -> float:
        lx, ly, lz = self.dims
        return 2.0 * (lx * ly + lx * lz + ly * lz)

    def wall_clearance(self) -> float:
        """Smallest distance of source or mic to any wall (negative when outside)."""
        d = np.asarray(self.dims)
        pts = np.array([self.source_pos, self.mic_pos])
        return float(np.min(np.minimum(pts, d - pts)))

    def check(self, regime: "SamplingRegime | None" = None, margin: float = 0.5) -> None:
        if any(x <= 0 for x in self.dims):
            raise ValueError("room dimensions must be positive")
        if self.rt60_target <= 0:
            raise ValueError("rt60_target must be positive")
        if self.wall_clearance() < margin - 1e-12:
            raise ValueError(f"source or mic closer than {margin} m to a wall")
        if regime is not None:
            for x, (lo, hi) in zip(self.dims, regime.dim_ranges):
                if not lo <= x <= hi:
                    raise ValueError(f"dimension {x} outside [{lo}, {hi}]")
            lo, hi = regime.rt60_range
            if not lo <= self.rt60_target <= hi:
                raise ValueError(f"rt60 {self.rt60_target} outside [{lo}, {hi}]")
            lo, hi = regime.distance_range
            if not lo - 1e-9 <= self.distance <= hi + 1e-9:
                raise ValueError(f"distance {self.distance} outside [{lo}, {hi}]")


@dataclass(frozen=True)
class SamplingRegime:
    name: str
    dim_ranges: tuple = ((5.0, 10.0), (5.0, 10.0), (2.5, 4.0))
    rt60_range: tuple = (0.2, 1.0)
    distance_range: tuple = (0.75, 2.5)
    mics_per_room: int = 16
    wall_margin: float = 0.5


MATCHED = SamplingRegime("matched")
MISMATCHED = SamplingRegime(
    "mismatched",
    dim_ranges=((10.0, 15.0), (10.0, 15.0), (4.0, 6.0)),
    rt60_range=(1.0, 1.5),
    distance_range=(2.5, 4.0),
)
REGIMES = {r.name: r for r in (MATCHED, MISMATCHED)}


def _place_pair(rng, dims, regime, max_tries):
    d = np.asarray(dims)
    m = regime.wall_margin
    lo_d, hi_d = regime.distance_range
    for _ in range(max_tries):
        src = rng.uniform(m, d - m)
        dist = rng.uniform(lo_d, hi_d)
        v = rng.standard_normal(3)
        mic = src + dist * v / np.linalg.norm(v)
        if np.all(mic >= m) and np.all(mic <= d - m):
            return src, mic
    return None


def _place_mic(rng, dims, src, regime, max_tries):
    d = np.asarray(dims)
    m = regime.wall_margin
    lo_d, hi_d = regime.distance_range
    for _ in range(max_tries):
        dist = rng.uniform(lo_d, hi_d)
        v = rng.standard_normal(3)
        mic = src + dist * v / np.linalg.norm(v)
        if np.all(mic >= m) and np.all(mic <= d - m):
            return mic
    return None


def _sample_shell(regime, rng):
    dims = tuple(float(rng.uniform(lo, hi)) for lo, hi in regime.dim_ranges)
    rt60 = float(rng.uniform(*regime.rt60_range))
    return dims, rt60


def sample_room_group(regime: SamplingRegime, seed: int, n_mics: int | None = None,
                      sample_rate: int = 16000, max_tries: int = 200) -> list[RoomSpec]:
    """One room and source with ``n_mics`` microphones (default ``regime.mics_per_room``).

    Rooms are redrawn until every microphone can be placed; after
    ``max_tries`` rooms :class:`InfeasibleRegimeError` is raised.
    """
    rng = np.random.default_rng(seed)
    n_mics = regime.mics_per_room if n_mics is None else n_mics
    for _ in range(max_tries):
        dims, rt60 = _sample_shell(regime, rng)
        pair = _place_pair(rng, dims, regime, 50)
        if pair is None:
            continue
        src, mic0 = pair
        mics = [mic0]
        while len(mics) < n_mics:
            mic = _place_mic(rng, dims, src, regime, 200)
            if mic is None:
                break
            mics.append(mic)
        if len(mics) < n_mics:
            continue
        return [
            RoomSpec(dims, rt60, tuple(map(float, src)), tuple(map(float, mic)), sample_rate)
            for mic in mics
        ]
    raise InfeasibleRegimeError(
        f"could not satisfy regime {regime.name!r} constraints in {max_tries} rooms"
    )


def sample_room(regime: SamplingRegime, seed: int, sample_rate: int = 16000) -> RoomSpec:
    """Single source/microphone room drawn uniformly under the regime's constraints."""
    return sample_room_group(regime, seed, n_mics=1, sample_rate=sample_rate)[0]


def eyring_absorption(dims, rt60: float, c: float = SPEED_OF_SOUND) -> float:
    """Uniform absorption coefficient giving ``rt60`` under Eyring's formula."""
    if rt60 <= 0:
        raise ValueError("rt60 must be positive")
    lx, ly, lz = dims
    volume = lx * ly * lz
    surface = 2.0 * (lx * ly + lx * lz + ly * lz)
    alpha = 1.0 - math.exp(-24.0 * math.log(10.0) * volume / (c * surface * rt60))
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"rt60 {rt60} s unreachable for this geometry (absorption {alpha})")
    return alpha


def default_max_order(reflection: float, floor_db: float = -60.0) -> int:
    """Reflection order past which a single image is below ``floor_db`` re. the direct path."""
    if reflection <= 0:
        return 0
    if reflection >= 1:
        raise ValueError("reflection coefficient must be < 1")
    return math.ceil(floor_db / (20.0 * math.log10(reflection)))


def _axis_images(length: float, src: float, mic: float, n_max: int):
    n = np.arange(-n_max, n_max + 1)
    offsets, orders = [], []
    for q in (0, 1):
        offsets.append((1 - 2 * q) * src + 2 * n * length - mic)
        orders.append(np.abs(n - q) + np.abs(n))
    return np.concatenate(offsets), np.concatenate(orders)


def _fractional_delay_add(out: np.ndarray, delays: np.ndarray, gains: np.ndarray,
                          half_width: int, chunk: int = 200_000) -> None:
    taps = np.arange(-half_width + 1, half_width + 1)
    for i in range(0, delays.size, chunk):
        d = delays[i:i + chunk]
        g = gains[i:i + chunk]
        base = np.floor(d).astype(np.int64)
        x = (base[:, None] + taps[None, :]) - d[:, None]
        kernel = np.sinc(x) * (0.5 + 0.5 * np.cos(np.pi * x / half_width))
        idx = base[:, None] + taps[None, :]
        ok = (idx >= 0) & (idx < out.size)
        out += np.bincount(idx[ok], weights=(g[:, None] * kernel)[ok], minlength=out.size)


def _image_lattice(spec: RoomSpec, reach: float):
    """Distances and reflection orders of all images closer than ``reach`` meters."""
    axes = [
        _axis_images(L, s, m, math.ceil(reach / (2 * L)) + 1)
        for L, s, m in zip(spec.dims, spec.source_pos, spec.mic_pos)
    ]
    (dx, ox), (dy, oy), (dz, oz) = axes
    dist2 = dx[:, None, None] ** 2 + dy[None, :, None] ** 2 + dz[None, None, :] ** 2
    keep = dist2 < reach**2
    order = (ox[:, None, None] + oy[None, :, None] + oz[None, None, :])[keep]
    return np.sqrt(dist2[keep]), order


def _decay_rt60(energy: np.ndarray, sample_rate: int) -> float:
    edc = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        db = 10 * np.log10(edc / edc[0])
    below = np.flatnonzero(db <= -25.0)
    if below.size == 0:
        return math.inf
    i0, i1 = int(np.flatnonzero(db <= -5.0)[0]), int(below[0])
    if i1 - i0 < 2:
        return 0.0
    slope = np.polyfit(np.arange(i0, i1 + 1) / sample_rate, db[i0:i1 + 1], 1)[0]
    return -60.0 / slope if slope < 0 else math.inf


def calibrate_reflection(spec: RoomSpec, dist: np.ndarray, order: np.ndarray,
                         c: float = SPEED_OF_SOUND) -> float:
    """Wall reflection coefficient whose image-source energy decay has the target RT60.

    The arrival-time energy histogram ``sum beta**(2k) / d**2`` is split by
    reflection order ``k`` once, so each trial ``beta`` costs one small
    matrix-vector product.  The RT60 is read off the backward-integrated
    histogram over -5..-25 dB, as :func:`rt60_from_edc` does on a waveform.
    """
    fs = spec.sample_rate
    arrival = np.rint(dist / c * fs).astype(np.int64)
    first = int(arrival.min())
    arrival -= first
    n = int(arrival.max()) + 1
    k_max = int(order.max()) + 1
    hist = np.bincount(order * n + arrival, weights=1.0 / dist**2, minlength=k_max * n)
    hist = hist.reshape(k_max, n)
    ks = np.arange(k_max)

    def excess(beta):
        return _decay_rt60((beta ** (2.0 * ks)) @ hist, fs) - spec.rt60_target

    lo, hi = 1e-3, 1.0 - 1e-9
    if excess(lo) > 0 or excess(hi) < 0:
        raise ValueError(f"rt60 {spec.rt60_target} s unreachable for this geometry")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-7:
            break
    return 0.5 * (lo + hi)


def synth_rir_ism(spec: RoomSpec, absorption: float | None = None, c: float = SPEED_OF_SOUND,
                  kernel_half_width: int = 8, duration_factor: float = 1.2,
                  highpass_hz: float | None = 10.0) -> Waveform:
    """Shoebox image-source RIR.

    All six walls share one reflection coefficient.  When ``absorption`` is
    not given, the coefficient is calibrated against the image lattice of
    this room so the measured RT60 matches ``rt60_target``; a uniform
    coefficient taken straight from Eyring's formula decays too slowly in
    rooms with one short dimension.  Images are kept up to
    ``spec.max_order`` (default from :func:`default_max_order`) and while
    they arrive within the output, which spans the direct-path delay plus
    ``duration_factor * rt60_target``.  Each image is placed with a
    Hann-windowed sinc of ``2 * kernel_half_width`` taps.

    Same-sign images pile up at DC and stretch the late decay, so the
    reflected part (not the direct path) goes through a 2nd-order
    Butterworth high-pass at ``highpass_hz``.
    """
    spec.check(margin=0.0)
    fs = spec.sample_rate
    direct = spec.distance / c * fs
    n_out = math.ceil(duration_factor * spec.rt60_target * fs + direct) + kernel_half_width + 1
    reach = (n_out - kernel_half_width) / fs * c
    dist, order = _image_lattice(spec, reach)
    if absorption is None:
        beta = calibrate_reflection(spec, dist, order, c)
    else:
        if not 0.0 < absorption <= 1.0:
            raise ValueError(f"absorption {absorption} outside (0, 1]")
        beta = math.sqrt(1.0 - absorption)
    max_order = spec.max_order if spec.max_order is not None else default_max_order(beta)
    keep = order <= max_order
    dist, order = dist[keep], order[keep]
    gains = beta ** order.astype(float) / (4 * math.pi * dist)
    delays = dist / c * fs
    direct_only = order == 0
    reflected = ~direct_only & (gains > 0)
    h = np.zeros(n_out)
    _fractional_delay_add(h, delays[reflected], gains[reflected], kernel_half_width)
    if highpass_hz:
        sos = signal.butter(2, highpass_hz, "highpass", fs=fs, output="sos")
        h = signal.sosfilt(sos, h)
    _fractional_delay_add(h, delays[direct_only], gains[direct_only], kernel_half_width)
    return Waveform(h, fs)


def polack_envelope(n, rt60: float, sample_rate: int) -> np.ndarray:
    """Amplitude envelope decaying by 60 dB of energy over ``rt60`` seconds."""
    return np.exp(-_DECAY_60DB * np.asarray(n, dtype=float) / (sample_rate * rt60))


def synth_rir_polack(rt60: float, duration: float, sample_rate: int = 16000, seed: int = 0,
                     tail_gain: float = 0.1) -> Waveform:
    """Unit direct impulse followed by exponentially decaying white Gaussian noise."""
    if rt60 <= 0 or duration <= 0:
        raise ValueError("rt60 and duration must be positive")
    rng = np.random.default_rng(seed)
    n = max(int(round(duration * sample_rate)), 2)
    h = np.empty(n)
    h[0] = 1.0
    k = np.arange(1, n)
    h[1:] = tail_gain * rng.standard_normal(n - 1) * polack_envelope(k, rt60, sample_rate)
    return Waveform(h, sample_rate)


def _samples(w) -> tuple[np.ndarray, int]:
    if isinstance(w, Waveform):
        return w.samples, w.sample_rate
    return np.asarray(w, dtype=float), 16000


def detect_direct_path(h, search_s: float = 0.05, rel_threshold: float = 0.5) -> int:
    """Index of the first local maximum of ``|h|`` reaching ``rel_threshold * max|h|``.

    The search covers ``search_s`` seconds from the first nonzero sample; if
    nothing qualifies there the global peak is returned.
    """
    x, fs = _samples(h)
    a = np.abs(x)
    if not np.any(a):
        raise ValueError("impulse response is identically zero")
    thr = rel_threshold * a.max()
    onset = int(np.flatnonzero(a)[0])
    stop = min(a.size, onset + int(round(search_s * fs)) + 1)
    above = np.flatnonzero(a[onset:stop] >= thr)
    if above.size == 0:
        return int(np.argmax(a))
    i = onset + int(above[0])
    while i + 1 < a.size and a[i + 1] > a[i]:
        i += 1
    return i


def align_direct_path(h) -> Waveform:
    """Drop samples before the direct path and scale it to exactly 1."""
    x, fs = _samples(h)
    i = detect_direct_path(Waveform(x, fs) if not isinstance(h, Waveform) else h)
    out = x[i:] / x[i]
    out[0] = 1.0
    return Waveform(out, fs)


def convolve(x, h) -> Waveform:
    """Full linear convolution, length ``len(x) + len(h) - 1``."""
    xs, fs = _samples(x)
    hs, _ = _samples(h)
    return Waveform(signal.fftconvolve(xs, hs), fs)
