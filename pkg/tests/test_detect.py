import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from lidal.detect import (CostPolicy, SignalStats, candidate_count, detection_at, error_rates,
                          esr_decide, esr_decide_batch, false_detection_at, floored_thresholds,
                          optimum_threshold, orthonormal_expand, prob_correct_esr,
                          prob_correct_single, prob_correct_sor_bound,
                          random_occupancy, roc_curve, simulate_slots, snr_stats, sor_decide,
                          sor_masks, sor_thresholds, threshold_for_false_detection)
from lidal.frontend import Snapshot


def test_candidate_count_closed_form():
    assert candidate_count(14, 10) == 15914
    assert candidate_count(4, 4) == 16
    with pytest.raises(ValueError):
        candidate_count(3, 4)


def test_threshold_limit_at_unit_colour_factor():
    stats = SignalStats.from_beta(1.0, 0.2, 1.001)
    assert abs(optimum_threshold(stats) - 0.5) / 0.5 < 1e-3
    assert optimum_threshold(SignalStats(1.0, 0.0, 0.2)) == pytest.approx(0.5)


def _likelihood_crossing(stats: SignalStats, ratio: float) -> float:
    """Root of p1(x) = ratio * p0(x) between 0 and mu, found numerically."""
    from scipy.optimize import brentq

    def gap(x):
        return (norm.logpdf(x, stats.mu, stats.sigma)
                - norm.logpdf(x, 0.0, stats.sigma_t) - math.log(ratio))

    return brentq(gap, 1e-9, stats.mu)


@given(st.floats(0.05, 0.4), st.floats(1.0, 3.0), st.floats(0.5, 2.0))
def test_optimum_threshold_is_the_likelihood_crossing(sigma_t, beta, ratio):
    stats = SignalStats.from_beta(1.0, sigma_t, beta)
    policy = CostPolicy.from_factors(gamma_fp=ratio, gamma_fa=1.0)
    threshold = optimum_threshold(stats, policy)
    try:
        expected = _likelihood_crossing(stats, ratio)
    except ValueError:
        return  # no crossing inside (0, mu)
    assert threshold == pytest.approx(expected, rel=1e-6, abs=1e-9)


def test_cost_policy_checks():
    with pytest.raises(ValueError):
        CostPolicy(p_o=0.7, q_o=0.7)
    with pytest.raises(ValueError):
        CostPolicy(alpha_12=-1)
    assert CostPolicy.from_factors(2.0, 1.0).ratio == pytest.approx(2.0)


def test_detection_probabilities():
    stats = SignalStats(1.0, 0.0, 0.5)
    assert false_detection_at(0.0, stats) == pytest.approx(0.5)
    assert detection_at(1.0, stats) == pytest.approx(0.5)
    threshold = threshold_for_false_detection(0.1, stats)
    assert false_detection_at(threshold, stats) == pytest.approx(0.1)


def test_roc_curve_shape():
    curve = roc_curve(SignalStats(1.0, 0.3, 0.4), 51)
    assert len(curve) == 51
    pfd = [r[1] for r in curve]
    pd = [r[2] for r in curve]
    assert all(a >= b for a, b in zip(pfd, pfd[1:]))
    assert all(d >= f for f, d in zip(pfd, pd))
    with pytest.raises(ValueError):
        roc_curve(SignalStats(1.0, 0.3, 0.4), 1)


def test_orthonormal_expansion_returns_slot_means():
    samples = np.repeat([0.0, 2.0, 1.0], 20)
    obs = orthonormal_expand(Snapshot(samples))
    assert np.allclose(obs.z, [0.0, 2.0, 1.0])
    with pytest.raises(ValueError):
        orthonormal_expand(Snapshot(samples), n_slots=4)


def _brute_force_map(z, stats):
    n = len(z)
    best, best_score = None, -math.inf
    for k in range(n + 1):
        for subset in itertools.combinations(range(n), k):
            mask = np.zeros(n, bool)
            mask[list(subset)] = True
            score = (norm.logpdf(z[mask], stats.mu, stats.sigma).sum()
                     + norm.logpdf(z[~mask], 0.0, stats.sigma_t).sum())
            if score > best_score:
                best, best_score = mask, score
    return best


def test_esr_matches_brute_force_map(rng):
    stats = snr_stats(12.0, 1.0, 0.338)
    for n in (1, 2, 3, 4):
        truth = rng.random((2500, n)) < 0.5
        z = simulate_slots(truth, stats, rng)
        fast = esr_decide_batch(z, stats)
        for row, decided in zip(z, fast):
            assert np.array_equal(decided, _brute_force_map(row, stats))


def test_esr_single_decision_agrees_with_batch(rng):
    stats = snr_stats(15.0)
    z = simulate_slots(random_occupancy(1, 4, 2, rng), stats, rng)[0]
    from lidal.detect import SlotObservation
    decision = esr_decide(SlotObservation(z), stats)
    assert np.array_equal(np.isin(range(4), sorted(decision.occupied_slots)),
                          esr_decide_batch(z[None], stats)[0])


def test_sor_rules():
    z = np.array([[0.9, 0.1, 0.3, 0.4, 0.35]])
    mask = sor_masks(z, 0.25, 0.5)[0]
    # slot 0 above high; slot 1 below low; grey slot 2 loses to slot 3; grey last slot marked
    assert mask.tolist() == [True, False, False, True, True]
    with pytest.raises(ValueError):
        sor_masks(z, 0.5, 0.5)


@given(st.lists(st.floats(-1, 2), min_size=1, max_size=10), st.floats(0.0, 0.4))
def test_sor_marks_every_strong_and_no_weak_slot(values, low):
    high = low + 0.3
    z = np.array(values)
    mask = sor_masks(z, low, high)[0]
    assert np.all(mask[z > high])
    assert not np.any(mask & (z < low) & ~np.roll(z >= low, 1))


def test_sor_decision_rank():
    from lidal.detect import SlotObservation
    decision = sor_decide(SlotObservation(np.array([0.0, 1.0, 0.0])), 0.3, 0.6)
    assert decision.occupied_slots == frozenset({1})
    assert decision.hypothesis_id == 2  # empty, {0}, {1}


def test_sor_default_thresholds_are_ordered():
    low, high = sor_thresholds(SignalStats(1.0, 0.3, 0.2))
    assert low < high == pytest.approx(0.5)


@given(st.floats(0.0, 5.0), st.floats(0.01, 2.0), st.floats(1e-6, 0.1))
def test_floored_thresholds(low, sigma, false_alarm):
    floor_low, floor_high = floored_thresholds(low, low + 0.1, sigma, false_alarm)
    assert floor_low >= sigma * norm.isf(false_alarm) - 1e-12
    assert floor_low >= low
    assert floor_high >= floor_low + sigma - 1e-12
    assert false_detection_at(floor_low, SignalStats(1.0, 0.0, sigma)) <= false_alarm + 1e-12


def test_floored_thresholds_vectorised():
    low, high = floored_thresholds(np.array([0.0, 10.0]), np.array([1.0, 11.0]), 1.0)
    assert low[0] == pytest.approx(norm.isf(1e-3)) and low[1] == 10.0
    assert high[1] == 11.0


def test_sor_closed_form_bound_is_below_monte_carlo(rng):
    stats = snr_stats(15.0)
    low, high = sor_thresholds(stats)
    bound = prob_correct_sor_bound(stats, low, high, 4)
    correct = []
    for k in range(5):
        truth = random_occupancy(4000, 4, k, rng)
        z = simulate_slots(truth, stats, rng)
        correct.append(np.mean(np.all(sor_masks(z, low, high) == truth, axis=1)))
    assert bound <= np.mean(correct) + 0.01


def test_esr_never_worse_than_sor(rng):
    rates = error_rates(12.0, 4, 2, 20_000, rng, colour_ratio=0.338)
    assert rates["esr"] <= rates["sor"] + 2 * rates["sor_se"]


def test_single_target_correct_probability_matches_simulation(rng):
    # the target slot holds a fixed level; the decision is right when it is the maximum
    level, sigma, n = 0.6, 0.3, 5
    noise = rng.normal(0.0, sigma, (200_000, n - 1))
    empirical = np.mean(noise.max(axis=1) < level)
    assert prob_correct_single(level, sigma, n) == pytest.approx(empirical, abs=0.005)
    assert prob_correct_esr(level, sigma, n, 2) > prob_correct_single(level, sigma, n)
    with pytest.raises(ValueError):
        prob_correct_esr(level, sigma, 3, 3)
