"""Receiver front end: noise, sampled snapshots and the zero-forcing equalizer."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .channel import (CHANNEL_WINDOW, ImpulseResponse, impulse_response, max_range,
                      rms_delay_spread, study_config)
from .env import Environment, TargetState

ELECTRON_CHARGE = 1.602e-19
SAMPLE_PERIOD = 1e-10
SLOT_WIDTH = 2e-9
PULSE_WIDTH = 2e-9
RECEIVER_BANDWIDTH = 315e6
MIMO_THERMAL_DENSITY = 2.5e-12
PIXEL_THERMAL_DENSITY = 2.6e-12


@dataclass(frozen=True)
class NoiseModel:
    thermal_density: float = MIMO_THERMAL_DENSITY
    background_current: float = 0.0
    bandwidth: float = RECEIVER_BANDWIDTH
    responsivity: float = 0.4
    signal_shot: bool = False  # the signal-dependent shot term is usually negligible
    electron_charge: float = ELECTRON_CHARGE

    def __post_init__(self):
        for name in ("thermal_density", "background_current", "bandwidth", "responsivity",
                     "electron_charge"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def widened(self, factor: float) -> "NoiseModel":
        """Same densities over ``factor`` times the bandwidth."""
        return NoiseModel(self.thermal_density, self.background_current, self.bandwidth * factor,
                          self.responsivity, self.signal_shot, self.electron_charge)


def noise_variance(model: NoiseModel, received_power: float = 0.0) -> float:
    """Total receiver noise variance in A^2: thermal plus shot."""
    thermal = model.thermal_density ** 2 * model.bandwidth
    current = model.background_current
    if model.signal_shot:
        current += model.responsivity * received_power
    shot = 2 * model.electron_charge * model.bandwidth * current
    return thermal + shot


def sample_noise_model(model: NoiseModel, sample_period: float = SAMPLE_PERIOD,
                       slot_width: float = SLOT_WIDTH) -> NoiseModel:
    """Per-sample noise whose slot average carries the receiver-bandwidth variance.

    Averaging ``slot_width / sample_period`` independent samples divides the
    variance by that count, so the per-sample bandwidth is widened by it.
    """
    return model.widened(slot_width / sample_period)


@dataclass
class Snapshot:
    samples: np.ndarray
    sample_period: float = SAMPLE_PERIOD
    slot_width: float = SLOT_WIDTH
    origin: str = ""
    index: int = 0

    def __post_init__(self):
        self.samples = np.asarray(self.samples, float)
        ratio = self.slot_width / self.sample_period
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("slot width must be a whole number of samples")

    @property
    def frame_length(self) -> float:
        return len(self.samples) * self.sample_period

    @property
    def samples_per_slot(self) -> int:
        return int(round(self.slot_width / self.sample_period))

    @property
    def slot_count(self) -> int:
        return len(self.samples) // self.samples_per_slot

    @property
    def times(self) -> np.ndarray:
        return self.sample_period * np.arange(len(self.samples))

    def replace(self, samples) -> "Snapshot":
        return Snapshot(np.asarray(samples, float), self.sample_period, self.slot_width,
                        self.origin, self.index)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t_ns", "current_A"])
            for t, value in zip(self.times, self.samples):
                writer.writerow([f"{t * 1e9:.3f}", repr(float(value))])


def pulse_response(ir: ImpulseResponse, pulse_width: float = PULSE_WIDTH,
                   tx_power: float | None = None, responsivity: float = 0.4,
                   sample_period: float = SAMPLE_PERIOD, frame_length: float | None = None) -> np.ndarray:
    """Noiseless photocurrent for a rectangular pulse, sampled every ``sample_period``."""
    tx_power = ir.tx_power if tx_power is None else tx_power
    frame_length = CHANNEL_WINDOW if frame_length is None else frame_length
    count = int(round(frame_length / sample_period))
    gains = ir.gains
    cumulative = np.concatenate([[0.0], np.cumsum(gains)])
    times = sample_period * np.arange(count)
    # bins arriving in (t - tau, t] contribute at sample time t
    upper = np.floor((times - ir.t0) / ir.bin_width + 1e-9).astype(int) + 1
    lower = np.floor((times - pulse_width - ir.t0) / ir.bin_width + 1e-9).astype(int) + 1
    upper = np.clip(upper, 0, len(gains))
    lower = np.clip(lower, 0, len(gains))
    return responsivity * tx_power * (cumulative[upper] - cumulative[lower])


def simulate_snapshot(ir: ImpulseResponse, pulse_width: float = PULSE_WIDTH,
                      tx_power: float | None = None, model: NoiseModel | None = None,
                      rng: np.random.Generator | None = None, frame_length: float | None = None,
                      sample_period: float = SAMPLE_PERIOD, slot_width: float = SLOT_WIDTH,
                      origin: str = "", index: int = 0) -> Snapshot:
    """Pulse-convolved photocurrent plus i.i.d. Gaussian noise of variance sigma_t^2 per sample."""
    if ir.bin_width > sample_period + 1e-18:
        raise ValueError("impulse response bins must be no wider than the sample period")
    model = NoiseModel() if model is None else model
    clean = pulse_response(ir, pulse_width, tx_power, model.responsivity, sample_period, frame_length)
    power = float(clean.max()) / model.responsivity if model.responsivity > 0 and len(clean) else 0.0
    sigma = np.sqrt(noise_variance(model, power))
    if sigma > 0:
        rng = np.random.default_rng() if rng is None else rng
        clean = clean + rng.normal(0.0, sigma, len(clean))
    return Snapshot(clean, sample_period, slot_width, origin, index)


@dataclass(frozen=True)
class ZfeTaps:
    weights: np.ndarray
    tap_spacing: float = SLOT_WIDTH
    main_index: int = 0  # slot index of the main channel tap used for the design

    @property
    def noise_enhancement(self) -> float:
        return float(np.sum(np.square(self.weights)))

    @staticmethod
    def identity(tap_spacing: float = SLOT_WIDTH) -> "ZfeTaps":
        return ZfeTaps(np.array([1.0]), tap_spacing)


def design_zfe(channel, num_taps: int, tap_spacing: float = SLOT_WIDTH,
               normalize: bool = True) -> ZfeTaps:
    """Zero-forcing FIR taps at slot spacing.

    The equalized channel is forced to one at the main (largest) tap and to zero
    at the ``num_taps - 1`` slot positions that follow it.
    """
    h = np.asarray(channel, float).ravel()
    if num_taps < 1 or num_taps % 2 == 0:
        raise ValueError("num_taps must be a positive odd integer")
    if h.size == 0 or not np.any(h):
        raise ValueError("degenerate channel: no nonzero tap")
    main = int(np.argmax(np.abs(h)))
    if normalize:
        h = h / h[main]
    rows = main + np.arange(num_taps)
    lag = rows[:, None] - np.arange(num_taps)[None, :]
    padded = np.concatenate([h, np.zeros(num_taps)])
    system = np.where((lag >= 0) & (lag < len(h)), padded[np.clip(lag, 0, len(padded) - 1)], 0.0)
    target = np.zeros(num_taps)
    target[0] = 1.0
    if abs(np.linalg.det(system)) < 1e-12:
        raise ValueError("degenerate channel: singular zero-forcing system")
    weights = np.linalg.solve(system, target)
    return ZfeTaps(weights, tap_spacing, main)


def equalize(snapshot: Snapshot, taps: ZfeTaps) -> Snapshot:
    """FIR filter at slot spacing: y(t) = sum_n c_n s(t - n T_s)."""
    step = int(round(taps.tap_spacing / snapshot.sample_period))
    x = snapshot.samples
    y = np.zeros_like(x)
    for n, c in enumerate(taps.weights):
        shift = n * step
        if shift == 0:
            y += c * x
        elif shift < len(x):
            y[shift:] += c * x[:-shift]
    return snapshot.replace(y)


def slot_sampled_channel(ir: ImpulseResponse, slot_width: float = SLOT_WIDTH) -> np.ndarray:
    """Channel energy per slot, with the first arrival at the start of slot zero."""
    gains = ir.gains
    nonzero = np.flatnonzero(gains)
    if nonzero.size == 0:
        return np.zeros(1)
    gains = gains[nonzero[0]:]
    per_slot = int(round(slot_width / ir.bin_width))
    count = -(-len(gains) // per_slot)
    padded = np.zeros(count * per_slot)
    padded[: len(gains)] = gains
    return padded.reshape(count, per_slot).sum(axis=1)


def slot_delay_spread(taps_or_channel, slot_width: float = SLOT_WIDTH) -> float:
    """RMS delay spread of a slot-spaced power profile (absolute values as weights)."""
    weights = np.abs(np.asarray(taps_or_channel, float))
    if weights.sum() == 0:
        return 0.0
    times = slot_width * np.arange(len(weights))
    mean = np.sum(weights * times) / weights.sum()
    return float(np.sqrt(np.sum(weights * (times - mean) ** 2) / weights.sum()))


@dataclass
class ZfeReport:
    """Result of designing the equalizer on the worst-case target placement."""

    taps: ZfeTaps
    channel: np.ndarray
    position: tuple[float, float]
    heading_deg: float
    delay_spread_before: float
    delay_spread_after: float
    notes: dict = field(default_factory=dict)


def equalized_channel(channel, taps: ZfeTaps) -> np.ndarray:
    h = np.asarray(channel, float)
    h = h / h[taps.main_index]
    return np.convolve(h, taps.weights)


def worst_case_channel(env=None, cfg=None, grid_step: float = 0.25, fidelity: str = "desk",
                       num_taps: int = 7, headings=(0, 45, 90, 135)) -> ZfeReport:
    """Design the ZFE on the in-footprint placement with the largest RMS delay spread.

    The search covers a square grid of ``grid_step`` spacing clipped to the
    footprint disc, and headings modulo the body's front/back symmetry.
    """
    env = env or Environment(floor_reflectivity=0.0, name="channel-study")
    cfg = cfg or study_config("monostatic")
    radius = max_range(cfg.rx_fov_deg, cfg.rx_position[2], 1.7)
    cx, cy = cfg.rx_position[0], cfg.rx_position[1]
    offsets = np.arange(-radius, radius + 1e-9, grid_step)
    best = None
    for dx in offsets:
        for dy in offsets:
            if dx * dx + dy * dy > radius * radius:
                continue
            for heading in headings:
                target = TargetState((cx + dx, cy + dy), heading)
                if not target.inside_room(env):
                    continue
                ir = impulse_response(env, cfg, [target], 2, fidelity, target_paths_only=True)
                if not np.any(ir.power_bins > 0):
                    continue
                spread = rms_delay_spread(ir)
                if best is None or spread > best[0]:
                    best = (spread, ir, target)
    if best is None:
        raise ValueError("no target placement produced a channel")
    spread, ir, target = best
    channel = slot_sampled_channel(ir)
    taps = design_zfe(channel, num_taps)
    after = equalized_channel(channel, taps)
    return ZfeReport(taps, channel, tuple(target.position), target.heading_deg,
                     slot_delay_spread(channel), slot_delay_spread(after),
                     {"ir_rms_delay_spread_s": spread, "grid_step_m": grid_step,
                      "selection": "max RMS delay spread over in-footprint grid"})
