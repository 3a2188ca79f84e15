import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.channel import ImpulseResponse
from lidal.frontend import (NoiseModel, Snapshot, ZfeTaps, design_zfe, equalize,
                            equalized_channel, noise_variance, pulse_response, sample_noise_model,
                            simulate_snapshot, slot_delay_spread, slot_sampled_channel)


def test_thermal_noise_variance():
    model = NoiseModel(2.5e-12, 0.0, 315e6)
    assert noise_variance(model) == pytest.approx((2.5e-12) ** 2 * 315e6)


def test_shot_noise_adds_background_term():
    model = NoiseModel(0.0, 1e-6, 1e8)
    assert noise_variance(model) == pytest.approx(2 * 1.602e-19 * 1e8 * 1e-6)


def test_noise_model_rejects_negative_values():
    with pytest.raises(ValueError):
        NoiseModel(thermal_density=-1.0)


def test_slot_average_keeps_receiver_variance(rng):
    receiver = NoiseModel()
    per_sample = sample_noise_model(receiver)
    ir = ImpulseResponse(1e-11, np.zeros(6000))
    means = []
    for _ in range(200):
        snap = simulate_snapshot(ir, model=per_sample, rng=rng)
        means.append(snap.samples.reshape(-1, snap.samples_per_slot).mean(axis=1))
    assert np.var(np.concatenate(means)) == pytest.approx(noise_variance(receiver), rel=0.05)


def test_rectangular_pulse_response():
    bins = np.zeros(6000)
    bins[500] = 2.0  # 2 W arriving 5 ns after firing, for 1 W transmitted
    ir = ImpulseResponse(1e-11, bins, tx_power=1.0)
    current = pulse_response(ir, responsivity=0.5)
    on = np.flatnonzero(current > 0)
    assert current.max() == pytest.approx(1.0)
    # the 2 ns pulse covers 20 samples starting at 5 ns
    assert len(on) == 20 and on[0] == 50


def test_snapshot_layout_guard():
    with pytest.raises(ValueError):
        Snapshot(np.zeros(10), sample_period=1e-10, slot_width=2.5e-10)


def test_zfe_worked_example():
    taps = design_zfe([1.0, 0.5], 3)
    assert np.allclose(taps.weights, [1.0, -0.5, 0.25])
    assert taps.noise_enhancement == pytest.approx(1 + 0.25 + 0.0625)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=8), st.sampled_from([3, 5, 7]))
def test_zfe_forces_zero_isi(channel, num_taps):
    try:
        taps = design_zfe(channel, num_taps)
    except ValueError:
        return
    out = equalized_channel(channel, taps)
    main = taps.main_index
    assert out[main] == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(out[main + 1:main + num_taps], 0.0, atol=1e-9)


def test_zfe_argument_checks():
    with pytest.raises(ValueError):
        design_zfe([1.0, 0.2], 4)
    with pytest.raises(ValueError):
        design_zfe([0.0, 0.0], 3)


def test_equalizer_noise_ratio_matches_tap_energy(rng):
    taps = design_zfe([1.0, 0.6, 0.3, 0.1], 7)
    noise = Snapshot(rng.normal(0, 1, 200_000))
    out = equalize(noise, taps)
    step = int(round(taps.tap_spacing / noise.sample_period))
    ratio = out.samples[step * 7:].var() / noise.samples.var()
    assert ratio == pytest.approx(taps.noise_enhancement, rel=0.05)


def test_identity_taps_leave_snapshot_unchanged(rng):
    snap = Snapshot(rng.normal(size=400))
    assert np.array_equal(equalize(snap, ZfeTaps.identity()).samples, snap.samples)


def test_slot_sampling_and_spread():
    bins = np.zeros(1000)
    bins[300] = 1.0
    bins[500] = 1.0
    channel = slot_sampled_channel(ImpulseResponse(1e-11, bins))
    assert np.allclose(channel, [1.0, 1.0, 0.0, 0.0])
    assert slot_delay_spread(channel) == pytest.approx(1e-9)
