import numpy as np
import pytest

from rirphys.decay import edc_time, rt60_from_edc
from rirphys.room import (
    MATCHED,
    MISMATCHED,
    SPEED_OF_SOUND,
    InfeasibleRegimeError,
    RoomSpec,
    SamplingRegime,
    align_direct_path,
    convolve,
    default_max_order,
    detect_direct_path,
    eyring_absorption,
    polack_envelope,
    sample_room,
    sample_room_group,
    synth_rir_ism,
    synth_rir_polack,
)
from rirphys.stft import Waveform

FS = 16000


def test_sampled_rooms_respect_regime():
    for regime in (MATCHED, MISMATCHED):
        for seed in range(500):
            spec = sample_room(regime, seed)
            spec.check(regime, margin=regime.wall_margin)
            for x, (lo, hi) in zip(spec.dims, regime.dim_ranges):
                assert lo <= x <= hi
            assert regime.distance_range[0] <= spec.distance <= regime.distance_range[1] + 1e-9
            assert spec.wall_clearance() >= 0.5


def test_room_group_shares_room_and_source():
    group = sample_room_group(MATCHED, 3)
    assert len(group) == 16
    assert len({(g.dims, g.rt60_target, g.source_pos) for g in group}) == 1
    assert len({g.mic_pos for g in group}) == 16
    for g in group:
        g.check(MATCHED)


def test_sampling_is_deterministic():
    assert sample_room_group(MATCHED, 11) == sample_room_group(MATCHED, 11)
    assert sample_room(MATCHED, 11) != sample_room(MATCHED, 12)


def test_infeasible_regime():
    regime = SamplingRegime("huge", distance_range=(100.0, 200.0))
    with pytest.raises(InfeasibleRegimeError):
        sample_room(regime, 0)


def test_room_check_rejects_bad_specs():
    with pytest.raises(ValueError):
        RoomSpec((5, 5, 3), 0.5, (0.1, 2, 1), (2, 2, 1)).check()
    with pytest.raises(ValueError):
        RoomSpec((5, 5, 3), -1.0, (1, 2, 1), (2, 2, 1)).check()
    with pytest.raises(ValueError):
        RoomSpec((20, 5, 3), 0.5, (1, 2, 1), (2, 2, 1)).check(MATCHED)


def test_eyring_absorption():
    dims = (6.0, 5.0, 3.0)
    V, S = 90.0, 126.0
    alpha = eyring_absorption(dims, 0.5)
    # invert the closed form back to a reverberation time
    rt60 = 24 * np.log(10) * V / (SPEED_OF_SOUND * S * -np.log(1 - alpha))
    assert rt60 == pytest.approx(0.5)
    with pytest.raises(ValueError):
        eyring_absorption(dims, 0.0)


def test_default_max_order():
    assert default_max_order(0.0) == 0
    assert default_max_order(0.1) == 3
    assert default_max_order(0.9) == 66
    with pytest.raises(ValueError):
        default_max_order(1.0)


def test_anechoic_room_gives_single_impulse():
    D = 80 * SPEED_OF_SOUND / FS  # exactly 80 samples of flight
    spec = RoomSpec((6.0, 5.0, 3.0), 0.3, (2.0, 2.5, 1.5), (2.0 + D, 2.5, 1.5))
    h = synth_rir_ism(spec, absorption=1.0)
    assert detect_direct_path(h) == 80
    expected = np.zeros(h.samples.size)
    expected[80] = 1 / (4 * np.pi * D)
    np.testing.assert_allclose(h.samples, expected, atol=1e-12)
    aligned = align_direct_path(h).samples
    assert aligned[0] == 1.0
    assert np.max(np.abs(aligned[1:])) < 1e-12


def test_first_reflection_arrival():
    # both paths land on integer sample delays: 80 direct, 280 via the x = 0
    # wall; every other image is more than 10 m away
    step = SPEED_OF_SOUND / FS
    s, D = 100 * step, 80 * step
    spec = RoomSpec((10.0, 10.0, 10.0), 0.4, (s, 5.0, 5.0), (s + D, 5.0, 5.0))
    h = synth_rir_ism(spec, absorption=0.5, highpass_hz=None).samples
    lo, hi = 80 + 9, int(10.0 / step) - 9
    peak = lo + int(np.argmax(np.abs(h[lo:hi])))
    assert peak == 280
    # amplitude ratio to the direct path: beta * d_direct / d_reflected
    assert h[peak] / h[80] == pytest.approx(np.sqrt(0.5) * 80 / 280, rel=1e-9)


def test_direct_path_offset_matches_geometry():
    for seed in range(5):
        spec = sample_room(MATCHED, seed)
        h = synth_rir_ism(spec)
        assert abs(detect_direct_path(h) - round(FS * spec.distance / SPEED_OF_SOUND)) <= 8


def test_ism_rt60_close_to_target():
    errs = []
    for seed in range(8):
        spec = sample_room(MATCHED, 100 + seed)
        h = align_direct_path(synth_rir_ism(spec))
        errs.append(abs(rt60_from_edc(edc_time(h)) - spec.rt60_target) / spec.rt60_target)
    assert np.median(errs) < 0.2


def test_ism_is_deterministic():
    spec = sample_room(MATCHED, 4)
    np.testing.assert_array_equal(synth_rir_ism(spec).samples, synth_rir_ism(spec).samples)


def test_ism_edc_nonincreasing_after_direct_path():
    h = synth_rir_ism(sample_room(MATCHED, 9))
    edc = edc_time(h.samples[detect_direct_path(h):]).values_db
    assert np.all(np.diff(edc) <= 1e-12)


def test_ism_rejects_bad_absorption():
    spec = sample_room(MATCHED, 0)
    with pytest.raises(ValueError):
        synth_rir_ism(spec, absorption=0.0)


def test_polack_envelope():
    env = polack_envelope(np.array([0, FS]), 1.0, FS)
    assert env[0] == 1.0
    assert 20 * np.log10(env[1]) == pytest.approx(-60.0)
    env = polack_envelope(np.arange(100), 0.5, FS)
    ratio = env[1:] / env[:-1]
    np.testing.assert_allclose(ratio, np.exp(-3 * np.log(10) / (FS * 0.5)))


def test_polack_rir():
    h = synth_rir_polack(0.6, 1.0, seed=5)
    assert h.samples.size == FS and h.samples[0] == 1.0
    np.testing.assert_array_equal(h.samples, synth_rir_polack(0.6, 1.0, seed=5).samples)
    assert not np.array_equal(h.samples, synth_rir_polack(0.6, 1.0, seed=6).samples)
    errs = [abs(rt60_from_edc(edc_time(synth_rir_polack(0.8, 1.2, seed=s))) - 0.8) / 0.8 for s in range(20)]
    assert np.median(errs) < 0.1
    with pytest.raises(ValueError):
        synth_rir_polack(0.0, 1.0)


def test_align_example():
    out = align_direct_path(Waveform(np.array([0, 0, 0.5, 0.1])))
    np.testing.assert_allclose(out.samples, [1.0, 0.2])


def test_align_is_idempotent():
    h = align_direct_path(synth_rir_ism(sample_room(MATCHED, 2)))
    again = align_direct_path(h)
    np.testing.assert_array_equal(again.samples, h.samples)
    assert h.samples[0] == 1.0


def test_detect_picks_first_strong_peak_not_global():
    x = np.zeros(400)
    x[10], x[11], x[12] = 0.6, 0.7, 0.1
    x[200] = 1.0
    assert detect_direct_path(x) == 11
    with pytest.raises(ValueError):
        detect_direct_path(np.zeros(5))


def test_convolve():
    rng = np.random.default_rng(0)
    x, h = rng.standard_normal(30), rng.standard_normal(7)
    y = convolve(x, h).samples
    expected = [sum(x[k] * h[n - k] for k in range(30) if 0 <= n - k < 7) for n in range(36)]
    np.testing.assert_allclose(y, expected, atol=1e-12)
    d = np.zeros(5)
    d[0] = 1
    np.testing.assert_allclose(convolve(x, d).samples[:30], x, atol=1e-12)
    assert not np.any(np.abs(convolve(np.zeros(10), h).samples) > 1e-15)
