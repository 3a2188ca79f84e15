import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.env import EnvironmentConfig, TargetState, build_environment
from lidal.geometry import target_boxes
from lidal.mimo import MimoFrontEnd, MimoSystem
from lidal.scene import split_into_slots


@given(st.lists(st.tuples(st.floats(0, 57.9e-9), st.floats(0, 1)), max_size=20))
def test_slot_split_conserves_amplitude(pulses):
    delays = np.array([d for d, _ in pulses])
    amplitudes = np.array([a for _, a in pulses])
    out = split_into_slots(delays, amplitudes, 30)
    assert out.sum() == pytest.approx(amplitudes.sum(), abs=1e-9)
    assert np.all(out >= -1e-15)


def test_slot_split_fraction():
    out = split_into_slots(np.array([2.5e-9]), np.array([1.0]), 4)
    assert np.allclose(out, [0.0, 0.75, 0.25, 0.0])


def test_target_shadows_background_and_adds_echo():
    env = build_environment(EnvironmentConfig("A"))
    front = MimoFrontEnd(MimoSystem(), env)
    target = TargetState((1.0, 1.0), 0)
    empty = front.engine.background(0)
    shadowed = front.engine.shadowed_background(0, target_boxes([target]))
    assert len(shadowed.power) < len(empty.power)
    frames = front.clean([target])
    assert frames[0].sum() > 0
    assert not np.allclose(frames[0], front.clean([])[0])
