"""Bayes thresholds, ROC curves and the slotted ESR / SOR receivers."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import comb, erfc
from scipy.stats import norm

from .frontend import Snapshot

ESR_CANDIDATE_BUDGET = 1_000_000


@dataclass(frozen=True)
class SignalStats:
    """Mean reflected amplitude, its colour spread and the noise std (all amperes)."""

    mu: float
    sigma_s: float
    sigma_t: float

    def __post_init__(self):
        if self.sigma_t <= 0:
            raise ValueError("sigma_t must be positive")
        if self.mu < 0 or self.sigma_s < 0:
            raise ValueError("mu and sigma_s must be non-negative")

    @property
    def sigma(self) -> float:
        """Std of the signal-present observation."""
        return math.hypot(self.sigma_s, self.sigma_t)

    @property
    def beta_sigma(self) -> float:
        return (self.sigma_s ** 2 + self.sigma_t ** 2) / self.sigma_t ** 2

    @staticmethod
    def from_beta(mu: float, sigma_t: float, beta_sigma: float) -> "SignalStats":
        if beta_sigma < 1:
            raise ValueError("beta_sigma must be at least 1")
        return SignalStats(mu, sigma_t * math.sqrt(beta_sigma - 1), sigma_t)

    @staticmethod
    def from_channel(channel_gain: float, mu_rho: float, sigma_rho: float,
                     sigma_t: float) -> "SignalStats":
        """Stats for a reflection factor with moments (mu_rho, sigma_rho) scaled by A_o."""
        return SignalStats(channel_gain * mu_rho, channel_gain * sigma_rho, sigma_t)

    def with_noise(self, sigma_t: float) -> "SignalStats":
        return SignalStats(self.mu, self.sigma_s, sigma_t)

    def equalized(self, noise_enhancement: float) -> "SignalStats":
        """Noise std after a ZFE with the given sum of squared taps."""
        return self.with_noise(self.sigma_t * math.sqrt(noise_enhancement))


@dataclass(frozen=True)
class CostPolicy:
    """Priors and Bayes costs; only the ratio gamma_FP / gamma_FA matters for the threshold."""

    p_o: float = 0.5
    q_o: float = 0.5
    alpha_11: float = 0.0
    alpha_12: float = 1.0
    alpha_21: float = 1.0
    alpha_22: float = 0.0

    def __post_init__(self):
        if not (0 <= self.p_o <= 1 and 0 <= self.q_o <= 1):
            raise ValueError("priors must lie in [0, 1]")
        if abs(self.p_o + self.q_o - 1) > 1e-9:
            raise ValueError("priors must sum to one")
        if min(self.alpha_11, self.alpha_12, self.alpha_21, self.alpha_22) < 0:
            raise ValueError("costs must be non-negative")

    @property
    def gamma_fp(self) -> float:
        return self.p_o * self.alpha_21

    @property
    def gamma_fa(self) -> float:
        return self.q_o * self.alpha_12

    @property
    def ratio(self) -> float:
        if self.gamma_fa == 0:
            raise ValueError("gamma_FA must be positive")
        return self.gamma_fp / self.gamma_fa

    @staticmethod
    def from_factors(gamma_fp: float = 1.0, gamma_fa: float = 1.0) -> "CostPolicy":
        return CostPolicy(0.5, 0.5, 0.0, 2 * gamma_fa, 2 * gamma_fp, 0.0)


def optimum_threshold(stats: SignalStats, policy: CostPolicy | None = None) -> float:
    """Threshold where the cost-weighted present/absent likelihoods cross.

    Written in a cancellation-free form so the beta_sigma -> 1 limit,
    mu/2 + sigma_t^2 ln(ratio)/mu, is reached continuously.
    """
    policy = policy or CostPolicy()
    log_ratio = math.log(policy.ratio)
    excess = stats.beta_sigma - 1.0
    if excess < 0:
        raise ValueError("beta_sigma below 1")
    sigma2 = stats.sigma ** 2
    c = 2 * sigma2 * (log_ratio - math.log(stats.sigma_t / stats.sigma))
    if excess == 0:
        if stats.mu == 0:
            raise ValueError("no threshold exists for mu = 0 and beta_sigma = 1")
        return stats.mu / 2 + stats.sigma_t ** 2 * log_ratio / stats.mu
    disc = stats.mu ** 2 + excess * (stats.mu ** 2 + c)
    if disc < 0:
        return math.inf  # the weighted present likelihood never wins
    root = math.sqrt(disc)
    denom = stats.mu + root
    if denom <= 0:
        return (root - stats.mu) / excess
    return (stats.mu ** 2 + c) / denom


def false_detection_at(threshold: float, stats: SignalStats) -> float:
    return float(0.5 * erfc(threshold / (math.sqrt(2) * stats.sigma_t)))


def detection_at(threshold: float, stats: SignalStats) -> float:
    return float(0.5 * erfc((threshold - stats.mu) / (math.sqrt(2) * stats.sigma)))


def prob_false_detection(stats: SignalStats, policy: CostPolicy | None = None) -> float:
    return false_detection_at(optimum_threshold(stats, policy), stats)


def prob_detection(stats: SignalStats, policy: CostPolicy | None = None) -> float:
    return detection_at(optimum_threshold(stats, policy), stats)


def threshold_for_false_detection(p_fd: float, stats: SignalStats) -> float:
    return float(stats.sigma_t * norm.isf(p_fd))


def roc_curve(stats: SignalStats, n_points: int = 101) -> list[tuple[float, float, float]]:
    """(D_th, P_FD, P_D) triples for D_th swept over [0, mu + 5 sigma]."""
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    thresholds = np.linspace(0.0, stats.mu + 5 * stats.sigma, n_points)
    return [(float(d), false_detection_at(d, stats), detection_at(d, stats)) for d in thresholds]


def write_roc_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["d_th", "p_fd", "p_d"])
        for d, pfd, pd in rows:
            writer.writerow([repr(d), repr(pfd), repr(pd)])


# ---------------------------------------------------------------- slotted receivers

@dataclass(frozen=True)
class SlotObservation:
    """Per-slot coefficients, expressed as slot-mean amplitudes (amperes)."""

    z: np.ndarray
    slot_width: float = 2e-9

    @property
    def n_slots(self) -> int:
        return len(self.z)


@dataclass(frozen=True)
class DetectionDecision:
    occupied_slots: frozenset
    hypothesis_id: int = 0

    @property
    def target_count(self) -> int:
        return len(self.occupied_slots)


def orthonormal_expand(snapshot: Snapshot, n_slots: int | None = None,
                       first_slot: int = 0) -> SlotObservation:
    """Project onto unit-energy rectangular slot functions, then divide by sqrt(T_s).

    The result is the mean amplitude over each slot, so a slot-filling pulse of
    height A yields A and noise keeps its per-slot amplitude statistics.
    """
    per = snapshot.samples_per_slot
    available = snapshot.slot_count - first_slot
    n_slots = available if n_slots is None else n_slots
    if n_slots > available:
        raise ValueError("more slots requested than the frame holds")
    start = first_slot * per
    block = snapshot.samples[start:start + n_slots * per].reshape(n_slots, per)
    return SlotObservation(block.mean(axis=1), snapshot.slot_width)


def candidate_count(n_slots: int, k_max: int) -> int:
    """Number of hypotheses with at most ``k_max`` occupied slots out of ``n_slots``."""
    if k_max > n_slots or k_max < 0:
        raise ValueError("k_max must lie in [0, n_slots]")
    return 1 + sum(int(comb(n_slots, k, exact=True)) for k in range(1, k_max + 1))


def _candidates(n_slots: int, k_max: int) -> np.ndarray:
    rows = []
    for k in range(k_max + 1):
        for subset in itertools.combinations(range(n_slots), k):
            row = np.zeros(n_slots, bool)
            row[list(subset)] = True
            rows.append(row)
    return np.array(rows)


_CANDIDATE_CACHE: dict[tuple[int, int], np.ndarray] = {}


def candidate_masks(n_slots: int, k_max: int) -> np.ndarray:
    key = (n_slots, k_max)
    if key not in _CANDIDATE_CACHE:
        if candidate_count(n_slots, k_max) > ESR_CANDIDATE_BUDGET:
            raise ValueError("too many ESR candidates; use the sub-optimum receiver (sor_decide)")
        _CANDIDATE_CACHE[key] = _candidates(n_slots, k_max)
    return _CANDIDATE_CACHE[key]


def esr_errors(z: np.ndarray, stats: SignalStats, masks: np.ndarray) -> np.ndarray:
    """Gaussian negative log-likelihood of every candidate (up to a constant).

    Occupied slots have mean mu and variance sigma^2, empty slots mean 0 and
    variance sigma_t^2. With sigma_s = 0 this is the squared distance to the
    candidate coefficients scaled by 1/(2 sigma_t^2).
    """
    z = np.atleast_2d(z)
    occupied = (z - stats.mu) ** 2 / (2 * stats.sigma ** 2) + math.log(stats.sigma)
    empty = z ** 2 / (2 * stats.sigma_t ** 2) + math.log(stats.sigma_t)
    # cost = sum(empty) + sum over occupied of (occupied - empty)
    delta = occupied - empty
    return empty.sum(axis=1)[:, None] + delta @ masks.T.astype(float)


def esr_decide(obs: SlotObservation, stats: SignalStats, k_max: int | None = None) -> DetectionDecision:
    """Exhaustive search over every candidate with at most ``k_max`` targets."""
    n = obs.n_slots
    k_max = n if k_max is None else k_max
    masks = candidate_masks(n, k_max)
    best = int(np.argmin(esr_errors(obs.z, stats, masks)[0]))
    return DetectionDecision(frozenset(np.flatnonzero(masks[best]).tolist()), best)


def esr_decide_batch(z: np.ndarray, stats: SignalStats, k_max: int | None = None) -> np.ndarray:
    """Vectorized ESR over rows of ``z``; returns occupancy masks."""
    n = z.shape[1]
    masks = candidate_masks(n, n if k_max is None else k_max)
    return masks[np.argmin(esr_errors(z, stats, masks), axis=1)]


def sor_masks(z: np.ndarray, low: float, high: float) -> np.ndarray:
    """Dual-threshold slot decisions for each row of ``z``.

    Above ``high``: present. Below ``low``: absent. In between, the slot is
    treated as half of a pulse straddling it and its right neighbour; the larger
    of the two is marked present (ties to the earlier slot) and the pair is
    resolved together. A grey slot with no right neighbour is marked present.
    """
    if not low < high:
        raise ValueError("D_thL must be below D_thH")
    z = np.atleast_2d(np.asarray(z, float))
    rows, n = z.shape
    present = z > high
    grey = (z >= low) & ~present
    consumed = np.zeros_like(grey)
    for j in range(n):
        active = grey[:, j] & ~consumed[:, j]
        if not active.any():
            continue
        if j == n - 1:
            present[active, j] = True
            continue
        right_wins = z[:, j + 1] > z[:, j]
        present[active & ~right_wins, j] = True
        present[active & right_wins, j + 1] = True
        consumed[active, j + 1] = True
    return present


def sor_decide(obs: SlotObservation, low: float, high: float) -> DetectionDecision:
    mask = sor_masks(obs.z, low, high)[0]
    return DetectionDecision(frozenset(np.flatnonzero(mask).tolist()), _hypothesis_rank(mask))


def _hypothesis_rank(mask: np.ndarray) -> int:
    """Position of an occupancy pattern in the size-then-lexicographic candidate order."""
    n = len(mask)
    slots = tuple(np.flatnonzero(mask).tolist())
    k = len(slots)
    rank = sum(int(comb(n, size, exact=True)) for size in range(k))
    for index, subset in enumerate(itertools.combinations(range(n), k)):
        if subset == slots:
            return rank + index
    raise AssertionError("unreachable")


def sor_thresholds(stats: SignalStats, policy: CostPolicy | None = None) -> tuple[float, float]:
    """Default (D_thL, D_thH): the Bayes threshold and mu / 2."""
    high = stats.mu / 2
    low = min(optimum_threshold(stats, policy), high * (1 - 1e-9))
    return low, high


def floored_thresholds(low, high, noise_std: float, false_alarm: float = 1e-3):
    """Raise (D_thL, D_thH) so a noise-only coefficient crosses D_thL with at most ``false_alarm``.

    Weak links give Bayes thresholds of a fraction of the noise level, which
    would mark most empty slots. D_thH stays at least one noise std above D_thL.
    """
    floor = noise_std * float(norm.isf(false_alarm))
    low = np.maximum(np.asarray(low, float), floor)
    high = np.maximum(np.asarray(high, float), low + noise_std)
    if low.ndim == 0:
        return float(low), float(high)
    return low, high


# ---------------------------------------------------------------- closed forms

def prob_correct_single(level: float, sigma_t: float, n_slots: int) -> float:
    """All N-1 noise-only slots fall below the target slot's value ``level``."""
    return float(norm.cdf(level / sigma_t) ** (n_slots - 1))


def prob_correct_esr(level: float, sigma_t: float, n_slots: int, k: int) -> float:
    """All N-k empty slots stay below ``level``."""
    if k >= n_slots:
        raise ValueError("requires N > k")
    return float(norm.cdf(level / sigma_t) ** (n_slots - k))


def prob_correct_sor_bound(stats: SignalStats, low: float, high: float, n_slots: int) -> float:
    """Lower bound on SOR correctness with target count uniform over 0..N.

    A hypothesis with k targets is counted correct when all k occupied slots
    exceed ``high`` and all N-k empty slots stay below ``low``.
    """
    p_target = float(norm.sf((high - stats.mu) / stats.sigma))
    p_empty = float(norm.cdf(low / stats.sigma_t))
    total = sum(p_target ** k * p_empty ** (n_slots - k) for k in range(n_slots + 1))
    return total / (n_slots + 1)


def snr_stats(snr_db: float, mu: float = 1.0, colour_ratio: float = 0.0,
              noise_enhancement: float = 1.0) -> SignalStats:
    """Slot statistics for SNR = mu^2 / sigma_t^2, optionally after a ZFE."""
    sigma_t = mu / math.sqrt(10 ** (snr_db / 10))
    return SignalStats(mu, colour_ratio * mu, sigma_t * math.sqrt(noise_enhancement))


def simulate_slots(truth: np.ndarray, stats: SignalStats, rng: np.random.Generator) -> np.ndarray:
    """Slot coefficients for boolean occupancy rows ``truth``."""
    truth = np.asarray(truth, bool)
    noise = rng.normal(0.0, stats.sigma_t, truth.shape)
    signal = np.where(truth, stats.mu + rng.normal(0.0, stats.sigma_s, truth.shape), 0.0)
    return signal + noise


def random_occupancy(trials: int, n_slots: int, k: int, rng: np.random.Generator) -> np.ndarray:
    keys = rng.random((trials, n_slots))
    order = np.argsort(keys, axis=1)
    truth = np.zeros((trials, n_slots), bool)
    np.put_along_axis(truth, order[:, :k], True, axis=1)
    return truth


def error_rates(snr_db: float, n_slots: int, k: int, trials: int, rng: np.random.Generator,
                colour_ratio: float = 0.0, noise_enhancement: float = 1.0,
                policy: CostPolicy | None = None) -> dict:
    """Monte Carlo hypothesis error rates of ESR and SOR for k slot-aligned targets."""
    stats = snr_stats(snr_db, 1.0, colour_ratio, noise_enhancement)
    truth = random_occupancy(trials, n_slots, k, rng)
    z = simulate_slots(truth, stats, rng)
    esr = esr_decide_batch(z, stats)
    low, high = sor_thresholds(stats, policy)
    sor = sor_masks(z, low, high)
    esr_err = np.any(esr != truth, axis=1)
    sor_err = np.any(sor != truth, axis=1)
    return {
        "esr": float(esr_err.mean()), "sor": float(sor_err.mean()),
        "esr_se": float(esr_err.std(ddof=1) / math.sqrt(trials)),
        "sor_se": float(sor_err.std(ddof=1) / math.sqrt(trials)),
        "d_th_low": low, "d_th_high": high,
    }
