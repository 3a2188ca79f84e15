import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.env import (COLOUR_TABLE, Cuboid, Environment, EnvironmentConfig, ReflectivityModel,
                       TargetState, build_environment, colour_moments, discretize_surfaces,
                       element_size, lamp_background_current, sample_reflection_factor,
                       target_cross_section, tile_face)


def test_room_presets():
    room_a = build_environment(EnvironmentConfig("A"))
    room_b = build_environment(EnvironmentConfig("B"))
    assert room_a.furniture == ()
    assert len(room_b.furniture) == 5
    assert (room_b.width_m, room_b.length_m, room_b.height_m) == (4.0, 8.0, 3.0)
    assert len(room_b.lamps) == 4


def test_overrides_and_validation():
    env = build_environment(EnvironmentConfig("A", width_m=5.0, wall_reflectivity=0.5))
    assert env.width_m == 5.0 and env.wall_reflectivity == 0.5
    with pytest.raises(ValueError):
        build_environment(EnvironmentConfig("C"))
    with pytest.raises(ValueError):
        Environment(wall_reflectivity=1.2)
    with pytest.raises(ValueError):
        Environment(furniture=(Cuboid((3.5, 0, 0), (1.0, 1.0, 1.0)),))


def test_colour_table_moments():
    weights = np.array([w for _, w, _ in COLOUR_TABLE])
    rho = np.array([r for _, _, r in COLOUR_TABLE])
    assert weights.sum() == pytest.approx(1.0)
    mean, std = colour_moments()
    assert mean == pytest.approx(float(weights @ rho))
    assert std == pytest.approx(math.sqrt(float(weights @ (rho - mean) ** 2)))
    assert mean == pytest.approx(0.669, abs=1e-3)


def test_reflection_factor_samples_match_truncated_moments(rng):
    model = ReflectivityModel()
    draws = sample_reflection_factor(model, rng, 200_000)
    assert draws.min() >= 0 and draws.max() <= 1
    assert draws.mean() == pytest.approx(model.mu_rho, abs=3e-3)
    assert draws.std() == pytest.approx(model.sigma_rho, abs=3e-3)


def test_reflectivity_model_rejects_bad_moments():
    with pytest.raises(ValueError):
        ReflectivityModel(mu_rho=1.2)
    with pytest.raises(ValueError):
        ReflectivityModel(sigma_rho=-0.1)


def test_target_state_validation():
    with pytest.raises(ValueError):
        TargetState((1, 1), heading_deg=30)
    with pytest.raises(ValueError):
        TargetState((1, 1), reflection_factor=1.5)


def test_cross_section_from_above_is_the_top_face():
    target = TargetState((2.0, 4.0), 0)
    area = target_cross_section(target, (2.0, 4.0, 3.0))
    assert area == pytest.approx(0.15 * 0.48)
    assert target_cross_section(target, (2.0, 4.0, 3.0), minimum=0.29) == 0.29


@given(st.sampled_from(range(0, 360, 45)), st.floats(-3, 3), st.floats(-3, 3))
def test_cross_section_bounded_by_box_projection(heading, dx, dy):
    target = TargetState((2.0, 4.0), heading)
    area = target_cross_section(target, (2.0 + dx, 4.0 + dy, 3.0))
    # the projection of a box never exceeds the sum of three orthogonal face areas
    assert 0 <= area <= 0.48 * 1.7 + 0.15 * 1.7 + 0.15 * 0.48 + 1e-12


@given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(0.01, 0.5))
def test_tiles_preserve_face_area(lu, lv, size):
    tiles = tile_face((0, 0, 0), (lu, 0, 0), (0, lv, 0), (0, 0, 1), size, 0.5)
    assert tiles.areas.sum() == pytest.approx(lu * lv)
    assert np.all(tiles.centers[:, 0] > 0) and np.all(tiles.centers[:, 0] < lu)


def test_discretized_room_area():
    env = Environment()
    elements = discretize_surfaces(env, 1)
    w, l, h = env.dims
    assert elements.areas.sum() == pytest.approx(2 * (w * l + w * h + l * h))
    assert element_size(1) == 0.20 and element_size(2) == 0.40
    assert element_size(1, "full") == 0.05
    with pytest.raises(ValueError):
        element_size(3)


def test_lamp_current_scales_with_area():
    assert lamp_background_current(85e-6) == pytest.approx(8.8e-6)
    assert lamp_background_current(20e-6) == pytest.approx(8.8e-6 * 20 / 85)
