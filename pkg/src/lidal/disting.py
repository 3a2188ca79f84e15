"""Telling moving people apart from static clutter: background subtraction and cross-correlation."""

from __future__ import annotations

import csv
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .frontend import Snapshot

SIGNIFICANCE = 4.0
HISTORY_DEPTH = 4


def bsm_subtract(previous: Snapshot, current: Snapshot) -> Snapshot:
    """Residual current - previous; static reflections cancel, noise variance doubles."""
    if len(previous.samples) != len(current.samples):
        raise ValueError("snapshots differ in length")
    if previous.sample_period != current.sample_period:
        raise ValueError("snapshots differ in sampling")
    return current.replace(current.samples - previous.samples)


def cross_correlation(first: np.ndarray, second: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """R(lag) = sum_t first(t) second(t + lag) for every lag; returns (lags, values)."""
    first = np.asarray(first, float)
    second = np.asarray(second, float)
    values = np.correlate(second, first, mode="full")
    lags = np.arange(-(len(first) - 1), len(second))
    return lags, values


def dominant_lag(first: np.ndarray, second: np.ndarray) -> int:
    lags, values = cross_correlation(first, second)
    return int(lags[np.argmax(values)])


def robust_noise_std(previous: np.ndarray, current: np.ndarray) -> float:
    """Per-sample noise std from the median absolute frame difference."""
    diff = np.asarray(current, float) - np.asarray(previous, float)
    mad = np.median(np.abs(diff - np.median(diff)))
    return float(1.4826 * mad / math.sqrt(2))


@dataclass
class MovementReport:
    tmi: int
    asymmetry: float = 0.0  # peak |R(lag) - R(-lag)| in units of its noise floor
    correlation_peaks: list = field(default_factory=list)  # (lag_samples, value)
    slot_weights: np.ndarray | None = None
    toa_per_slot: dict = field(default_factory=dict)


def _local_peaks(lags, values, floor):
    inner = (values[1:-1] >= values[:-2]) & (values[1:-1] >= values[2:]) & (values[1:-1] > floor)
    idx = np.flatnonzero(inner) + 1
    return [(int(lags[i]), float(values[i])) for i in idx]


def fast_xcorr(previous: Snapshot, current: Snapshot, noise_std: float | None = None,
               kappa: float = SIGNIFICANCE) -> MovementReport:
    """Target movement indicator from the full-frame cross-correlation.

    Static scenes correlate like an autocorrelation, which is symmetric in lag;
    a target appearing, leaving or moving adds a peak on one side only. TMI is
    set when the asymmetry R(lag) - R(-lag) clears ``kappa`` times its noise floor.
    """
    a = previous.samples
    b = current.samples
    if len(a) != len(b):
        raise ValueError("snapshots differ in length")
    lags, values = cross_correlation(a, b)
    sigma = robust_noise_std(a, b) if noise_std is None else noise_std
    energy = float(a @ a + b @ b)
    floor = math.sqrt(2 * sigma ** 2 * energy + 2 * sigma ** 4 * len(a))
    asym = np.abs(values - values[::-1])
    peak = float(asym.max())
    if floor == 0:
        score = math.inf if peak > 1e-12 * max(energy, 1e-300) else 0.0
    else:
        score = peak / floor
    peaks = _local_peaks(lags, values, kappa * floor)
    return MovementReport(int(score > kappa), score, peaks)


@dataclass
class SnapshotCube:
    """Rolling buffer of the latest snapshots from one transceiver."""

    depth: int = HISTORY_DEPTH
    snapshots: deque = field(default_factory=deque)

    def push(self, snapshot: Snapshot) -> None:
        if self.snapshots:
            ref = self.snapshots[-1]
            if len(ref.samples) != len(snapshot.samples) or ref.sample_period != snapshot.sample_period:
                raise ValueError("snapshot layout differs from the cube")
        self.snapshots.append(snapshot)
        while len(self.snapshots) > self.depth + 1:
            self.snapshots.popleft()

    @property
    def latest(self) -> Snapshot:
        return self.snapshots[-1]

    @property
    def history(self) -> list[Snapshot]:
        return list(self.snapshots)[:-1]

    def ready(self) -> bool:
        return len(self.snapshots) >= 2

    def history_mean(self) -> np.ndarray:
        """Sum of the buffered earlier snapshots divided by their count."""
        hist = self.history
        if not hist:
            raise ValueError("insufficient history")
        return np.mean([s.samples for s in hist], axis=0)

    def history_median(self) -> np.ndarray:
        hist = self.history
        if not hist:
            raise ValueError("insufficient history")
        return np.median([s.samples for s in hist], axis=0)


def _slot_window(samples: np.ndarray, slot: int, per: int, pad: int) -> np.ndarray:
    lo = slot * per - pad
    hi = (slot + 1) * per + pad
    out = np.zeros(hi - lo)
    src_lo, src_hi = max(lo, 0), min(hi, len(samples))
    if src_hi > src_lo:
        out[src_lo - lo:src_hi - lo] = samples[src_lo:src_hi]
    return out


def slow_xcorr(cube: SnapshotCube, slot: int, noise_std: float | None = None,
               kappa: float = SIGNIFICANCE) -> tuple[int, int]:
    """(lag, weight) for one slot from the latest snapshot against the history mean.

    The weight is 1 when the slot changed by more than ``kappa`` times the
    matched-filter noise floor. The lag is the peak of the correlation of the
    latest slot window against the history, measured from the history's own
    autocorrelation peak; it is reported as 0 whenever the change is not significant.
    """
    if not cube.ready():
        raise ValueError("insufficient history: at least two snapshots are needed")
    latest = cube.latest
    per = latest.samples_per_slot
    if slot < 0 or slot >= latest.slot_count:
        raise ValueError("slot outside the frame")
    depth = len(cube.history)
    history = cube.history_mean()
    x = _slot_window(latest.samples, slot, per, per)
    y = _slot_window(history, slot, per, per)
    sigma = robust_noise_std(cube.history[-1].samples, latest.samples) if noise_std is None else noise_std
    change = x - y
    template = np.ones(per)
    matched = np.correlate(change, template, mode="valid")
    floor = sigma * math.sqrt(1 + 1 / depth) * math.sqrt(per)
    significant = floor == 0 and np.any(np.abs(matched) > 1e-12) or (
        floor > 0 and np.abs(matched).max() > kappa * floor)
    if not significant:
        return 0, 0
    lags, values = cross_correlation(y, x)
    lag = int(lags[np.argmax(values)])
    if lag == 0:
        # where the change sits relative to the history's energy centre
        centre_change = int(np.argmax(np.abs(matched)))
        centre_hist = int(np.argmax(np.correlate(y, template, mode="valid")))
        lag = centre_change - centre_hist or 1
    return lag, 1


def slot_weights(cube: SnapshotCube, n_slots: int | None = None, noise_std: float | None = None,
                 kappa: float = SIGNIFICANCE) -> np.ndarray:
    n_slots = cube.latest.slot_count if n_slots is None else n_slots
    return np.array([slow_xcorr(cube, j, noise_std, kappa)[1] for j in range(n_slots)], int)


def toa_estimate(samples: np.ndarray, slot: int, weight: int, per: int, sample_period: float,
                 template: np.ndarray | None = None, min_peak: float = 0.0) -> float | None:
    """Pulse arrival time within a flagged slot via matched-filter lag maximisation.

    Returns None for unflagged slots or when the matched-filter peak is below ``min_peak``.
    """
    if not weight:
        return None
    template = np.ones(per) if template is None else np.asarray(template, float)
    window = _slot_window(np.asarray(samples, float), slot, per, len(template))
    scores = np.correlate(window, template, mode="valid")
    # candidate starts from slot start - len(template) up to slot end
    best = int(np.argmax(scores))
    if scores[best] <= min_peak:
        return None
    start = slot * per - len(template) + best
    start = min(max(start, slot * per), (slot + 1) * per - 1)
    return start * sample_period


# ---------------------------------------------------------------- slot-domain forms
# The same two distinguishers applied to slot (or pixel) coefficient vectors
# rather than to sampled waveforms.


def bsm_slots(previous: np.ndarray, current: np.ndarray) -> np.ndarray:
    """Coefficient-wise background subtraction along the last axis."""
    previous = np.asarray(previous, float)
    current = np.asarray(current, float)
    if previous.shape != current.shape:
        raise ValueError("coefficient vectors differ in shape")
    return current - previous


def change_weights(history: np.ndarray, current: np.ndarray, noise_std: float,
                   kappa: float = SIGNIFICANCE) -> np.ndarray:
    """0/1 weight per coefficient: the change against the history mean clears kappa noise floors.

    ``history`` has the S earlier vectors stacked on axis 0.
    """
    history = np.asarray(history, float)
    if history.ndim < 2 or len(history) < 1:
        raise ValueError("insufficient history")
    depth = len(history)
    floor = noise_std * math.sqrt(1 + 1 / depth)
    change = np.asarray(current, float) - history.mean(axis=0)
    return (np.abs(change) > kappa * floor).astype(int)


def motion_weights(snapshots: np.ndarray, noise_std: float, kappa: float = SIGNIFICANCE
                   ) -> np.ndarray:
    """0/1 weight per coefficient: some pair of snapshots in the window differs by kappa floors.

    ``snapshots`` stacks the window (oldest first) on axis 0. A coefficient
    whose value changes between any two snapshots of the window carries motion,
    even when the latest snapshot happens to resemble the window average.
    """
    snapshots = np.asarray(snapshots, float)
    if snapshots.ndim < 2 or len(snapshots) < 2:
        raise ValueError("insufficient history")
    spread = snapshots.max(axis=0) - snapshots.min(axis=0)
    return (spread > kappa * noise_std * math.sqrt(2.0)).astype(int)


def ccm_slots(history: np.ndarray, current: np.ndarray, noise_std: float,
              kappa: float = SIGNIFICANCE, background: np.ndarray | None = None
              ) -> tuple[np.ndarray, np.ndarray]:
    """(weights, gated output) of the slow correlation on coefficient vectors.

    The weights come from the whole window (history plus current). The gated
    output is the current vector minus the static background, multiplied by
    the weights. Without a calibrated ``background`` the history median is
    used as its estimate.
    """
    history = np.asarray(history, float)
    current = np.asarray(current, float)
    if history.ndim < 2 or len(history) < 1:
        raise ValueError("insufficient history")
    weights = motion_weights(np.concatenate([history, current[None]]), noise_std, kappa)
    reference = np.median(history, axis=0) if background is None else np.asarray(background, float)
    return weights, weights * (current - reference)


def median_noise_factor(depth: int, trials: int = 200_000, seed: int = 0) -> float:
    """Std of (x - median of ``depth`` earlier samples) for unit-variance noise."""
    rng = np.random.default_rng(seed)
    draws = rng.standard_normal((trials, depth + 1))
    return float(np.std(draws[:, -1] - np.median(draws[:, :-1], axis=1)))


def write_correlation_csv(lags: np.ndarray, values: np.ndarray, sample_period: float, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lag_ns", "value"])
        for lag, value in zip(lags, values):
            writer.writerow([f"{lag * sample_period * 1e9:.3f}", repr(float(value))])


# ---------------------------------------------------------------- synthetic propositions

PROPOSITION_TMI = {1: 0, 2: 1, 3: 1, 4: 0, 5: 1}


def _pulse(length: int, start: int, width: int, height: float) -> np.ndarray:
    out = np.zeros(length)
    out[start:start + width] = height
    return out


def synthetic_proposition(number: int, rng: np.random.Generator, snr_db: float = 15.0,
                          length: int = 600, width: int = 20, height: float = 1.0
                          ) -> tuple[Snapshot, Snapshot]:
    """Two consecutive frames for one of the five movement propositions.

    Obstacle and target echoes are rectangular pulses of the same height; the
    per-sample noise std is ``height / 10**(snr_db/20)``.
    """
    if number not in PROPOSITION_TMI:
        raise ValueError("proposition must be 1..5")
    sigma = height / 10 ** (snr_db / 20)
    t_b = int(rng.integers(50, 250))
    t_m = int(rng.integers(300, 450))
    t_m2 = t_m + int(rng.choice([-1, 1])) * int(rng.integers(width, 4 * width))
    obstacle = _pulse(length, t_b, width, height)
    first = obstacle.copy()
    second = obstacle.copy()
    if number == 2:
        second += _pulse(length, t_m, width, height)
    elif number == 3:
        first += _pulse(length, t_m, width, height)
        second += _pulse(length, t_m2, width, height)
    elif number == 4:
        first += _pulse(length, t_m, width, height)
        second += _pulse(length, t_m, width, height)
    elif number == 5:
        first += _pulse(length, t_m, width, height)
    first = first + rng.normal(0, sigma, length)
    second = second + rng.normal(0, sigma, length)
    return Snapshot(first, index=0), Snapshot(second, index=1)
