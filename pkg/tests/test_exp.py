import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lidal.env import EnvironmentConfig, build_environment
from lidal.exp import (WALL_MARGIN, MetricsReport, PixelTracker, ScenarioConfig, _score,
                       canonical_distinguisher, cdf, count_reflectivity, drmse, greedy_match,
                       mape, noise_factor, place_targets, run_scenario, run_scenario_paired,
                       scenario_world, step_targets, write_rows_csv)
from lidal.imgrx import build_pixel_map


def test_mape_examples():
    assert mape([2, 2], [2, 2]) == 0.0
    assert mape([4], [3]) == 25.0
    assert mape([2, 4], [1, 5]) == pytest.approx(37.5)


def test_mape_guards():
    with pytest.raises(ValueError):
        mape([0, 2], [1, 2])
    with pytest.raises(ValueError):
        mape([1], [1, 2])
    with pytest.raises(ValueError):
        mape([], [])


def test_drmse_examples():
    truth = np.array([[1.0, 1.0], [2.0, 3.0], [0.5, 0.2]])
    assert drmse(truth, truth) == 0.0
    assert drmse(truth, truth + [0.3, 0.4]) == pytest.approx(0.5)
    assert drmse([[0.0, 0.0]], [[1.0, 0.0]]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        drmse(np.zeros((0, 2)), np.zeros((0, 2)))


@given(st.lists(st.floats(0, 100), min_size=1, max_size=40))
def test_cdf_properties(values):
    steps = cdf(values)
    fractions = [f for _, f in steps]
    xs = [v for v, _ in steps]
    assert xs == sorted(xs)
    assert all(a <= b for a, b in zip(fractions, fractions[1:]))
    assert fractions[-1] == pytest.approx(1.0)


def test_cdf_examples():
    assert cdf([1, 1, 1]) == [(1.0, 1.0)]
    assert cdf([1, 2]) == [(1.0, 0.5), (2.0, 1.0)]
    values = [3.0, 1.0, 2.0, 5.0, 4.0]
    median = next(v for v, f in cdf(values) if f >= 0.5)
    assert median == np.median(values)


def test_greedy_match_gate_and_uniqueness():
    truth = [(0.0, 0.0), (2.0, 0.0)]
    est = [(0.1, 0.0), (0.2, 0.0), (5.0, 5.0)]
    assert greedy_match(truth, est, gate=1.0) == [(0, 0)]
    assert greedy_match(truth, [], gate=1.0) == []


def test_config_validation():
    with pytest.raises(ValueError):
        ScenarioConfig(iterations=0)
    with pytest.raises(ValueError):
        ScenarioConfig(max_targets=0)
    with pytest.raises(ValueError):
        ScenarioConfig(system="radar")
    with pytest.raises(ValueError):
        ScenarioConfig(mobility_factor=1.5)
    assert ScenarioConfig(scenario="3", mobility_factor=0.4).move_probability == 0.4
    assert ScenarioConfig(scenario="2").room == "B"


def test_distinguisher_names_follow_the_system():
    assert canonical_distinguisher("img", "ccm") == "pccm"
    assert canonical_distinguisher("img", "bsm") == "psm"
    assert canonical_distinguisher("mimo", "pccm") == "ccm"
    assert noise_factor("bsm", 4) == pytest.approx(math.sqrt(2))
    assert noise_factor("psm", 4) == pytest.approx(math.sqrt(1.25))


@given(st.integers(1, 15), st.integers(0, 10_000))
def test_placement_invariants(count, seed):
    env = build_environment(EnvironmentConfig("B"))
    xy = place_targets(env, count, np.random.default_rng(seed))
    assert xy.shape == (count, 2)
    assert np.all(xy >= WALL_MARGIN) and np.all(xy[:, 0] <= env.width_m - WALL_MARGIN)
    if count > 1:
        d = np.linalg.norm(xy[:, None] - xy[None], axis=2)
        assert d[~np.eye(count, dtype=bool)].min() >= 0.5
    for box in env.furniture:
        inside = ((xy[:, 0] > box.lo[0]) & (xy[:, 0] < box.hi[0])
                  & (xy[:, 1] > box.lo[1]) & (xy[:, 1] < box.hi[1]))
        assert not inside.any()


@given(st.integers(1, 10), st.integers(0, 10_000))
def test_steps_keep_spacing_and_length(count, seed):
    env = build_environment(EnvironmentConfig("B"))
    rng = np.random.default_rng(seed)
    xy = place_targets(env, count, rng)
    headings = [0] * count
    moved, new_headings = step_targets(env, xy, headings, rng, 1.0)
    lengths = np.linalg.norm(moved - xy, axis=1)
    assert np.all(np.isclose(lengths, 0.0) | np.isclose(lengths, 0.3))
    assert all(h % 45 == 0 for h in new_headings)
    if count > 1:
        d = np.linalg.norm(moved[:, None] - moved[None], axis=2)
        assert d[~np.eye(count, dtype=bool)].min() >= 0.5 - 1e-9


def test_zero_move_probability_freezes_targets(rng):
    env = build_environment(EnvironmentConfig("A"))
    xy = place_targets(env, 5, rng)
    moved, _ = step_targets(env, xy, [0] * 5, rng, 0.0)
    assert np.array_equal(moved, xy)


def test_world_is_reproducible():
    cfg = ScenarioConfig(seed=3)
    env = build_environment(EnvironmentConfig("A"))
    rho = count_reflectivity(cfg, 4)
    a = scenario_world(cfg, env, 4, 2, rho)
    b = scenario_world(cfg, env, 4, 2, rho)
    assert a == b and len(a) == cfg.steps + 1
    assert np.array_equal(rho, count_reflectivity(cfg, 4))


def test_truth_oracle_scores_zero():
    cfg = ScenarioConfig()
    env = build_environment(EnvironmentConfig("A"))
    world = scenario_world(cfg, env, 6, 0, count_reflectivity(cfg, 6))
    from lidal.mimo import PositionEstimate
    oracle = [PositionEstimate(*t.position) for t in world[-1]]
    row = _score(cfg, "ccm", 6, 0, world[-1], oracle)
    assert row.ape == 0.0 and row.drmse == 0.0
    report = MetricsReport(cfg, [row])
    assert report.mape_by_count() == {6: 0.0}
    assert report.mean_drmse == 0.0


def test_pixel_tracker_follows_and_forgets():
    pixel_map = build_pixel_map()
    tracker = PixelTracker(pixel_map, np.zeros(128), np.full(128, 0.5))
    current = np.zeros(128)
    current[10] = 1.0
    assert tracker.update([10], current) == {10}
    assert tracker.update([], current) == {10}      # still lit: kept
    current[10], current[11] = 0.0, 1.0
    assert tracker.update([11], current) == {11}    # moved next door: replaced
    assert tracker.update([], np.zeros(128)) == set()


def test_small_run_is_deterministic_and_worker_independent(tmp_path):
    cfg = ScenarioConfig("1", "mimo", "ccm", max_targets=2, iterations=2, seed=5)
    first = run_scenario_paired(cfg, ("bsm", "ccm"))
    second = run_scenario_paired(cfg, ("bsm", "ccm"), workers=2)
    for name in ("bsm", "ccm"):
        write_rows_csv(first[name], tmp_path / "a.csv")
        write_rows_csv(second[name], tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert [r.n_targets for r in first[name].rows] == [1, 1, 2, 2]


def test_imaging_run_produces_bounded_metrics():
    cfg = ScenarioConfig("1", "img", "ccm", max_targets=2, iterations=2, seed=1)
    report = run_scenario(cfg)
    assert report.config.distinguisher == "pccm"
    assert all(r.ape >= 0 for r in report.rows)
    assert all(r.drmse is None or r.drmse <= 1.0 for r in report.rows)
    summary = report.summary()
    assert summary["config"]["system"] == "img"


def test_case_study_short_window():
    from lidal.exp import run_case_study
    cfg = ScenarioConfig("case_study", "img", "ccm", seed=2, duration_s=600.0,
                         buffer_snapshots=500)
    report = run_case_study(cfg)
    assert len(report.rows) == 60
    assert all(v >= 0 for v in report.window_mape)
    assert report.summary()["config"]["duration_s"] == 600.0
