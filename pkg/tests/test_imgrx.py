import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.imgrx import (WORST_CASE_ERROR, ImagingReceiver, build_pixel_map, grp_partition,
                         lens_transmission, pccm, pixel_localize, psm, run_grp_scan, soimr_decide)


def test_lens_transmission_at_normal_incidence():
    assert lens_transmission(0.0) == pytest.approx(0.8778)
    assert lens_transmission(0.5) < lens_transmission(0.0)


def test_receiver_geometry():
    rx = ImagingReceiver()
    assert rx.pixel_count == 128
    assert rx.max_range == pytest.approx(math.tan(math.radians(72)) * 1.3)
    assert rx.min_pixel_distance == pytest.approx(rx.footprint / rx.zoom_ratio)


def test_pixel_map_covers_the_room():
    pixel_map = build_pixel_map()
    centres = pixel_map.centres
    assert centres[:, 0].min() == pytest.approx(0.25) and centres[:, 0].max() == pytest.approx(3.75)
    assert centres[:, 1].min() == pytest.approx(0.25) and centres[:, 1].max() == pytest.approx(7.75)
    assert np.array_equal(pixel_map.pixel_of(centres[:, 0], centres[:, 1]), np.arange(128))
    assert pixel_map.pixel_of(-1.0, 2.0)[0] == -1


def test_pixel_map_rejects_oversized_grid():
    with pytest.raises(ValueError):
        build_pixel_map(ImagingReceiver(footprint=0.6))


@given(st.floats(0.0, 3.999), st.floats(0.0, 7.999))
def test_pixel_localization_error_bound(x, y):
    pixel_map = build_pixel_map()
    pixel = int(pixel_map.pixel_of(x, y)[0])
    est = pixel_localize(pixel, pixel_map)
    assert math.hypot(est.x - x, est.y - y) <= WORST_CASE_ERROR + 1e-12
    assert WORST_CASE_ERROR == pytest.approx(0.354, abs=1e-3)


def test_groups_are_four_by_four_blocks():
    groups = grp_partition(build_pixel_map())
    assert [len(g) for g in groups] == [16] * 8
    assert sorted(np.concatenate(groups).tolist()) == list(range(128))


def test_soimr_rules():
    z = np.zeros(128)
    z[0] = 2.0          # above high
    z[20] = 0.7         # grey, beats its grey neighbour 21
    z[21] = 0.6
    z[60] = 0.7         # isolated grey pixel
    marked = soimr_decide(z, 0.5, 1.0)
    assert marked == {0, 20, 60}
    with pytest.raises(ValueError):
        soimr_decide(np.zeros(10), 0.5, 1.0)
    with pytest.raises(ValueError):
        soimr_decide(z, 1.0, 0.5)


def test_grp_scan_reads_each_group_from_its_own_frame():
    pixel_map = build_pixel_map()
    groups = grp_partition(pixel_map)
    frames = np.zeros((8, 128))
    pixel = int(groups[3][5])
    frames[3, pixel] = 2.0
    frames[0, pixel] = 9.0  # outside frame 0's group: ignored
    result = run_grp_scan(pixel_map, groups, frames, (0.5, 1.0))
    assert result.marked == [pixel] and result.count == 1


def test_pixel_distinguishers():
    history = np.zeros((4, 128))
    current = np.zeros(128)
    current[10] = 1.0
    assert psm(history, current)[10] == 1.0
    weights, displacement, gated = pccm(history, current, 0.01)
    assert weights[10] == 1 and displacement != 0 and gated[10] == 1.0
    weights, displacement, gated = pccm(history, np.zeros(128), 0.01)
    assert not weights.any() and displacement == 0 and not gated.any()
    with pytest.raises(ValueError):
        pccm(history[:1], current, 0.01)
