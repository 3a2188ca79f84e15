import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.channel import (SPEED_OF_LIGHT, ImpulseResponse, TransceiverConfig, channel_bandwidth,
                           concentrator_gain, edge_geometry, impulse_response, lambertian_order,
                           max_range, received_power_bistatic_max,
                           received_power_monostatic_max, rms_delay_spread,
                           study_config, trace_paths)
from lidal.env import Environment, TargetState


def test_lambertian_order_of_75_degrees():
    # independent form: cos(phi)^n = 1/2 at the half-power semi-angle
    n = lambertian_order(75.0)
    assert math.cos(math.radians(75.0)) ** n == pytest.approx(0.5)
    assert n == pytest.approx(0.513, abs=0.005)


def test_concentrator_gain_and_max_range():
    assert concentrator_gain(1.7, 43.8) == pytest.approx(6.0, abs=0.1)
    assert max_range(43.8, 3.0, 1.7) == pytest.approx(1.25, abs=0.01)


def test_geometry_guards():
    with pytest.raises(ValueError):
        max_range(43.8, 1.5, 1.7)
    with pytest.raises(ValueError):
        lambertian_order(90.0)
    with pytest.raises(ValueError):
        concentrator_gain(1.5, 0.0)
    with pytest.raises(ValueError):
        TransceiverConfig(rx_fov_deg=95.0)


@given(st.floats(5, 80), st.floats(2.0, 5.0))
def test_max_range_grows_with_fov(fov, d_o):
    assert max_range(fov + 1, d_o, 1.7) > max_range(fov, d_o, 1.7) > 0


def test_edge_geometry_is_consistent():
    geom = edge_geometry(43.8)
    assert geom.R_1 == pytest.approx(geom.R_2)
    assert math.cos(geom.theta) == pytest.approx(1.3 / geom.R_1)
    assert edge_geometry(43.8, tx_offset_factor=3.0).R_1 > geom.R_1


def test_monostatic_closed_form_scales_with_reflectivity():
    cfg = TransceiverConfig()
    geom = edge_geometry(cfg.rx_fov_deg)
    one = received_power_monostatic_max(cfg, geom, 1.0, 0.29)
    assert received_power_monostatic_max(cfg, geom, 0.5, 0.29) == pytest.approx(one / 2)
    assert one > 0


@given(st.floats(20.0, 70.0), st.floats(0.5, 3.0))
def test_bistatic_form_reduces_to_monostatic_when_collocated(fov_deg, lambertian):
    cfg = TransceiverConfig(rx_fov_deg=fov_deg, tx_lambertian=lambertian)
    geom = edge_geometry(fov_deg)
    mono = received_power_monostatic_max(cfg, geom, 0.7, 0.29)
    bi = received_power_bistatic_max(cfg, geom, 0.7, 0.29)
    assert abs(bi - mono) / mono < 1e-12


def _two_impulses(separation_bins: int, length: int = 6000) -> ImpulseResponse:
    bins = np.zeros(length)
    bins[100] = bins[100 + separation_bins] = 1.0
    return ImpulseResponse(1e-11, bins)


@pytest.mark.parametrize("separation_ns", [0.5, 1.0, 2.0])
def test_bandwidth_of_two_equal_echoes(separation_ns):
    # |H(f)| = |cos(pi f D)|, which first reaches 1/sqrt(2) at f = 1/(4 D)
    ir = _two_impulses(int(round(separation_ns * 100)))
    expected = 1.0 / (4 * separation_ns * 1e-9)
    assert channel_bandwidth(ir) == pytest.approx(expected, rel=0.01)


def test_delay_spread_of_two_equal_echoes():
    ir = _two_impulses(200)
    assert rms_delay_spread(ir) == pytest.approx(1e-9)


def test_zero_response_rejected():
    with pytest.raises(ValueError):
        channel_bandwidth(ImpulseResponse(1e-11, np.zeros(10)))
    with pytest.raises(ValueError):
        ImpulseResponse(1e-11, -np.ones(3))


def test_impulse_response_addition():
    a = ImpulseResponse(1e-11, np.array([1.0, 0.0]))
    b = ImpulseResponse(1e-11, np.array([0.0, 2.0, 3.0]))
    assert np.allclose((a + b).power_bins, [1.0, 2.0, 3.0])


def test_target_paths_arrive_no_earlier_than_the_direct_bounce():
    env = Environment(floor_reflectivity=0.0)
    cfg = study_config("monostatic")
    target = TargetState((2.4, 4.3), 45)
    paths = trace_paths(env, cfg, [target], 2, target_paths_only=True)
    assert len(paths.gain) > 0 and np.all(paths.via_target)
    shortest = 2 * (cfg.rx_position[2] - target.height_m) / SPEED_OF_LIGHT
    assert paths.delay.min() >= shortest - 1e-12
    assert np.all(paths.gain > 0)


def test_far_target_echo_is_weaker():
    env = Environment(floor_reflectivity=0.0)
    cfg = study_config("monostatic")
    near = impulse_response(env, cfg, [TargetState((2.0, 4.2))], 1, target_paths_only=True)
    far = impulse_response(env, cfg, [TargetState((2.0, 5.0))], 1, target_paths_only=True)
    assert near.total_gain > far.total_gain > 0
