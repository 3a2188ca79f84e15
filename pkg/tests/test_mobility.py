import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.env import EnvironmentConfig, build_environment
from lidal.mobility import (PopulationProcess, blocked_fraction_sweep, build_grid,
                            default_pathways, grid_from_blocked, interest_cells, max_targets,
                            mobility_factor, nomadic_model, p_mobility_detection, path_blocked,
                            population_events, simulate_pathway, simulate_walk, suf,
                            suf_from_counts, time_average_occupancy, uniform_model)


def test_population_bound():
    assert max_targets(12, 14) == pytest.approx(6.0)
    with pytest.raises(ValueError):
        max_targets(14, 12)
    with pytest.raises(ValueError):
        PopulationProcess(14, 12)


def test_empty_room_suf_is_one():
    grid = build_grid(build_environment(EnvironmentConfig("A")))
    assert suf(grid) == 1.0


def test_furnished_room_suf_below_one():
    grid = build_grid(build_environment(EnvironmentConfig("B")))
    assert 0 < suf(grid) < 1


def test_suf_from_counts():
    assert suf_from_counts([8, 8, 4, 0]) == pytest.approx(1 - 12 / 32)


@given(st.integers(0, 2**16 - 1), st.floats(0.0, 1.0))
def test_transition_rows_are_stochastic(bits, p_stay):
    blocked = np.array([(bits >> k) & 1 for k in range(16)], bool).reshape(4, 4)
    grid = grid_from_blocked(blocked)
    model = uniform_model(grid, p_stay)
    dense = model.dense(grid)
    assert np.allclose(dense.sum(axis=1), 1.0)
    assert np.all(dense >= 0)
    # no probability flows into a blocked cell from a free one
    free = ~blocked.ravel()
    assert np.allclose(dense[np.ix_(free, ~free)], 0.0)


def test_move_fraction_matches_mobility_detection_probability(rng):
    grid = build_grid(build_environment(EnvironmentConfig("A")))
    model = uniform_model(grid, 0.02)
    trace = simulate_walk(grid, model, 1.0, 0.3 * 100_000, rng)
    empirical = trace.moved[1:].mean()
    assert empirical == pytest.approx(p_mobility_detection(grid, model), abs=0.01)


def test_walk_never_enters_furniture(rng):
    env = build_environment(EnvironmentConfig("B"))
    grid = build_grid(env)
    trace = simulate_walk(grid, uniform_model(grid), 1.0, 600.0, rng)
    assert not grid.blocked[trace.cells[:, 0], trace.cells[:, 1]].any()
    steps = np.abs(np.diff(trace.cells, axis=0))
    assert steps.max() <= 1
    assert np.all(np.diff(trace.times) > 0)


def test_nomadic_walker_stays_only_at_interest_cells(rng):
    env = build_environment(EnvironmentConfig("B"))
    grid = build_grid(env)
    cells = interest_cells(grid, env, 9, rng)
    assert len(cells) == 9 and all(not grid.blocked[c] for c in cells)
    model = nomadic_model(grid, cells)
    trace = simulate_walk(grid, model, 1.0, 900.0, rng, behaviour="nomadic")
    stays = [tuple(trace.cells[k]) for k in range(1, len(trace.cells)) if not trace.moved[k]]
    assert set(stays) <= set(cells)


def test_blocked_fraction_trend():
    rows = blocked_fraction_sweep([0.0, 0.1, 0.2, 0.3, 0.4])
    values = [r["p_mdt_realistic"] for r in rows]
    assert all(a > b for a, b in zip(values, values[1:]))
    assert rows[0]["suf"] == 1.0


def test_cyclic_pathway_is_periodic(rng):
    square = np.array([(1.0, 1.0), (2.2, 1.0), (2.2, 2.2), (1.0, 2.2), (1.0, 1.0)])
    trace = simulate_pathway(square, 1.2, 40.0, rng, start_fraction=0.0, sample_step=0.3)
    lap_samples = int(round(4.8 / 0.3))
    assert np.allclose(trace.positions[lap_samples], trace.positions[0])
    assert np.allclose(trace.positions[2 * lap_samples], trace.positions[0])


def test_pathway_pauses_count_as_dwell(rng):
    path = default_pathways()[0]
    trace = simulate_pathway(path, 1.0, 300.0, rng, pauses={1: 20.0}, start_fraction=0.0)
    assert trace.dwell_time >= 20.0
    assert mobility_factor([trace.dwell_time], 300.0) < 1.0


def test_default_pathways_avoid_furniture():
    env = build_environment(EnvironmentConfig("B"))
    assert not any(path_blocked(p, env) for p in default_pathways())


def test_pathway_argument_checks(rng):
    with pytest.raises(ValueError):
        simulate_pathway([(0, 0)], 1.0, 10.0, rng)
    with pytest.raises(ValueError):
        simulate_pathway([(0, 0), (1, 0)], 0.0, 10.0, rng)


def test_mobility_factor_examples():
    assert mobility_factor([0.0], 100.0) == 1.0
    assert mobility_factor([25.0, 25.0], 100.0) == 0.5
    with pytest.raises(ValueError):
        mobility_factor([200.0], 100.0)


def test_long_run_occupancy_approaches_queue_mean(rng):
    proc = PopulationProcess(12, 14, window_s=3600.0 * 20_000)
    events = population_events(proc, rng)
    occupancy = time_average_occupancy(events, proc.window_s)
    assert occupancy == pytest.approx(proc.mean_occupancy, rel=0.15)


def test_isolated_cells_warn():
    blocked = np.ones((3, 3), bool)
    blocked[1, 1] = False
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        suf(grid_from_blocked(blocked))
    assert caught
