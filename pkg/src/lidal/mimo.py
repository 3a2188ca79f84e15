"""Eight-transceiver MIMO system: ranging, trilateration, scan cycles and closed forms."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf, erfc

from .channel import (SPEED_OF_LIGHT, Receiver, TransceiverConfig, concentrator_gain,
                      lambertian_order, max_range)
from .detect import (SignalStats, detection_at, false_detection_at, floored_thresholds, sor_masks,
                     sor_thresholds)
from .env import D_A_MIN, Environment, colour_moments, lamp_background_current
from .frontend import (MIMO_THERMAL_DENSITY, PULSE_WIDTH, RECEIVER_BANDWIDTH, SLOT_WIDTH,
                       NoiseModel, noise_variance)
from .geometry import target_boxes
from .scene import Frame, SceneEngine, split_into_slots

CEILING = 3.0
TARGET_HEIGHT = 1.7
RANGE_RESOLUTION = SPEED_OF_LIGHT * PULSE_WIDTH / 2
TRANSCEIVER_XY = tuple((x, y) for x in (1.0, 3.0) for y in (1.0, 3.0, 5.0, 7.0))
NEIGHBOUR_COUNT = 2
MONOSTATIC_THRESHOLD_FACTOR = 0.32
BISTATIC_THRESHOLD_FACTOR = 0.35
MIMO_PD_AREA = 20e-6
MIMO_FOV_DEG = 43.8
MIMO_TX_POWER = 18.0
MIMO_CPC_INDEX = 1.7
FRAME_SLOTS = 30


# ---------------------------------------------------------------- ranging


def range_monostatic(t_trip: float) -> float:
    if t_trip < 0:
        raise ValueError("trip time must be non-negative")
    return SPEED_OF_LIGHT * t_trip / 2


def range_bistatic(t_trip: float, r1: float) -> float:
    """Transmitter-to-target range given the receiver-to-target range ``r1``."""
    path = SPEED_OF_LIGHT * t_trip
    if path < r1 - 1e-12:
        raise ValueError(f"inconsistent ranging: path {path:.4f} m shorter than R1 {r1:.4f} m")
    return max(path - r1, 0.0)


def horizontal_range(slant: float, drop: float = CEILING - TARGET_HEIGHT) -> float:
    """Floor-plane distance for a slant range to a point ``drop`` below the ceiling."""
    return math.sqrt(max(slant * slant - drop * drop, 0.0))


@dataclass(frozen=True)
class RangeObservation:
    anchor: int
    t_trip: float
    range_m: float
    mode: str

    def __post_init__(self):
        if self.range_m < 0:
            raise ValueError("range must be non-negative")
        if self.mode not in ("monostatic", "bistatic"):
            raise ValueError("mode must be monostatic or bistatic")


@dataclass(frozen=True)
class PositionEstimate:
    x: float
    y: float
    target_id: int = -1
    anchors: tuple = ()
    residual: float = 0.0
    clamped: bool = False
    localized: bool = True

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


def least_squares_position(anchors, ranges, bounds: tuple[float, float] | None = None,
                           target_id: int = -1) -> PositionEstimate:
    """Linearised multilateration X = (A^T A)^-1 A^T B with the first anchor as reference."""
    anchors = np.asarray(anchors, float)
    ranges = np.asarray(ranges, float)
    if anchors.ndim != 2 or anchors.shape[1] != 2 or len(anchors) != len(ranges):
        raise ValueError("anchors must be (K, 2) with one range each")
    if len(anchors) < 3:
        raise ValueError("at least three anchors are required")
    ref = anchors[0]
    a = anchors[1:] - ref
    b = 0.5 * (ranges[0] ** 2 - ranges[1:] ** 2 + np.sum(anchors[1:] ** 2, axis=1)
               - np.sum(ref ** 2))
    normal = a.T @ a
    scale = max(1.0, float(np.abs(normal).max()))
    if abs(np.linalg.det(normal)) < 1e-9 * scale ** 2:
        raise ValueError("degenerate anchor geometry: anchors are collinear")
    x = np.linalg.solve(normal, a.T @ b)
    clamped = False
    if bounds is not None:
        clipped = np.clip(x, [0.0, 0.0], bounds)
        clamped = bool(np.any(clipped != x))
        x = clipped
    residual = float(np.mean(np.abs(ranges - np.linalg.norm(anchors - x, axis=1))))
    return PositionEstimate(float(x[0]), float(x[1]), target_id, tuple(map(tuple, anchors)),
                            residual, clamped)


# ---------------------------------------------------------------- closed forms


@dataclass(frozen=True)
class LinkBudget:
    """Parameters of the edge-of-footprint link budgets."""

    tx_power: float = MIMO_TX_POWER
    tx_lambertian: float = 0.5
    target_lambertian: float = 1.0
    cross_section: float = D_A_MIN
    pd_area: float = MIMO_PD_AREA
    filter_transmission: float = 1.0
    fov_deg: float = MIMO_FOV_DEG
    cpc_index: float = MIMO_CPC_INDEX
    ceiling: float = CEILING
    target_height: float = TARGET_HEIGHT
    mu_rho: float = field(default_factory=lambda: colour_moments()[0])
    sigma_rho: float = field(default_factory=lambda: colour_moments()[1])
    responsivity: float = 0.4
    thermal_density: float = MIMO_THERMAL_DENSITY
    bandwidth: float = RECEIVER_BANDWIDTH

    @property
    def constant(self) -> float:
        gain = concentrator_gain(self.cpc_index, self.fov_deg)
        return ((self.tx_lambertian + 1) * (self.target_lambertian + 1) * self.tx_power
                * self.cross_section * self.pd_area * self.filter_transmission * gain)

    @property
    def edge_range(self) -> float:
        return max_range(self.fov_deg, self.ceiling, self.target_height)

    @property
    def noise_std(self) -> float:
        model = NoiseModel(self.thermal_density, 0.0, self.bandwidth, self.responsivity)
        return math.sqrt(noise_variance(model))


def mean_received_monostatic(budget: LinkBudget | None = None) -> tuple[float, float]:
    """(mean, std) in watts of the echo from a target at the footprint edge."""
    b = budget or LinkBudget()
    drop = b.ceiling - b.target_height
    n = b.tx_lambertian
    geometry = drop ** (n + 3) / (4 * math.pi ** 2 * (b.edge_range ** 2 + drop ** 2) ** ((n + 7) / 2))
    return b.constant * b.mu_rho * geometry, b.constant * b.sigma_rho * geometry


def mean_received_bistatic(budget: LinkBudget | None = None,
                           anchor_factor: float = 3.0) -> tuple[float, float]:
    """(mean, std) in watts for an edge target lit by an anchor ``anchor_factor`` x R_Max away."""
    b = budget or LinkBudget()
    drop = b.ceiling - b.target_height
    n = b.tx_lambertian
    far = ((anchor_factor * b.edge_range) ** 2 + drop ** 2) ** ((n + 3) / 2)
    near = (b.edge_range ** 2 + drop ** 2) ** 2
    geometry = drop ** (n + 3) / (4 * math.pi ** 2 * far * near)
    return b.constant * b.mu_rho * geometry, b.constant * b.sigma_rho * geometry


def link_stats(mode: str, budget: LinkBudget | None = None) -> SignalStats:
    """Photocurrent statistics of the edge link: colour spread and receiver noise."""
    b = budget or LinkBudget()
    if mode == "monostatic":
        mean, std = mean_received_monostatic(b)
    elif mode == "bistatic":
        mean, std = mean_received_bistatic(b)
    else:
        raise ValueError("mode must be monostatic or bistatic")
    return SignalStats(b.responsivity * mean, b.responsivity * std, b.noise_std)


def operating_point(mode: str, budget: LinkBudget | None = None,
                    factor: float | None = None) -> dict:
    """(D_th, P_FD, P_D) with D_th a fixed fraction of the mean edge echo."""
    stats = link_stats(mode, budget)
    if factor is None:
        factor = MONOSTATIC_THRESHOLD_FACTOR if mode == "monostatic" else BISTATIC_THRESHOLD_FACTOR
    threshold = factor * stats.mu
    return {"mode": mode, "d_th": threshold, "p_fd": false_detection_at(threshold, stats),
            "p_d": detection_at(threshold, stats), "mu": stats.mu, "sigma_s": stats.sigma_s,
            "sigma_t": stats.sigma_t}


def operating_point_monte_carlo(mode: str, trials: int, rng: np.random.Generator,
                                budget: LinkBudget | None = None,
                                factor: float | None = None) -> dict:
    point = operating_point(mode, budget, factor)
    noise = rng.normal(0.0, point["sigma_t"], trials)
    present = point["mu"] + rng.normal(0.0, point["sigma_s"], trials) + rng.normal(
        0.0, point["sigma_t"], trials)
    return {"p_fd": float(np.mean(noise > point["d_th"])),
            "p_d": float(np.mean(present > point["d_th"]))}


def miss_probability(threshold_m: float, mean_m: float, std_m: float,
                     thresholds_b, means_b, stds_b) -> float:
    """Edge-target miss probability with the monostatic and K bistatic factors multiplied."""
    thresholds_b, means_b, stds_b = map(np.atleast_1d, (thresholds_b, means_b, stds_b))
    k = len(thresholds_b)

    def factor(d, m, s):
        if s == 0:
            return 2.0 if d > m else 0.0
        return 1 + erf((d - m) / (s * math.sqrt(2)))

    value = 0.5 ** (k + 1) * factor(threshold_m, mean_m, std_m)
    for d, m, s in zip(thresholds_b, means_b, stds_b):
        value *= factor(d, m, s)
    return float(value)


def localization_probability(p_d_mono: float, p_d_bistatic) -> float:
    return float(p_d_mono * np.prod(np.atleast_1d(p_d_bistatic)))


def localization_probability_erfc(threshold_m, mean_m, std_m, thresholds_b, means_b,
                                  stds_b) -> float:
    thresholds_b, means_b, stds_b = map(np.atleast_1d, (thresholds_b, means_b, stds_b))
    k = len(thresholds_b)
    value = 0.5 ** (k + 1) * erfc((threshold_m - mean_m) / (std_m * math.sqrt(2)))
    for d, m, s in zip(thresholds_b, means_b, stds_b):
        value *= erfc((d - m) / (s * math.sqrt(2)))
    return float(value)


def observation_window(budget: LinkBudget | None = None) -> float:
    """Trip-time spread between an edge target on the distant-anchor path and one underfoot."""
    b = budget or LinkBudget()
    drop = b.ceiling - b.target_height
    radius = b.edge_range
    far = math.sqrt((3 * radius) ** 2 + drop ** 2)
    return (far + radius / math.sin(math.radians(b.fov_deg)) - 2 * drop) / SPEED_OF_LIGHT


def max_countable(window: float, pulse_width: float = PULSE_WIDTH, zones: int = 8) -> float:
    return window / pulse_width * zones


def mac_overhead(window: float, frames: int, mac_frame: float) -> float:
    if mac_frame <= 0:
        raise ValueError("MAC frame duration must be positive")
    return window * frames / mac_frame


def system_probabilities(budget: LinkBudget | None = None, neighbours: int = NEIGHBOUR_COUNT,
                         zones: int = 8, mac_frame: float = 0.1,
                         window: float | None = None) -> dict:
    b = budget or LinkBudget()
    mono = link_stats("monostatic", b)
    bi = link_stats("bistatic", b)
    d_m = MONOSTATIC_THRESHOLD_FACTOR * mono.mu
    d_b = BISTATIC_THRESHOLD_FACTOR * bi.mu
    p_md = miss_probability(d_m, mono.mu, mono.sigma, [d_b] * neighbours, [bi.mu] * neighbours,
                            [bi.sigma] * neighbours)
    p_d_m = detection_at(d_m, mono)
    p_d_b = detection_at(d_b, bi)
    window = observation_window(b) if window is None else window
    frames = zones * (neighbours + 1)
    return {
        "p_md": p_md,
        "p_d_monostatic": p_d_m,
        "p_d_bistatic": p_d_b,
        "p_l": localization_probability(p_d_m, [p_d_b] * neighbours),
        "t_w": window,
        "t_cm": max_countable(window, PULSE_WIDTH, zones),
        "frames": frames,
        "oh_ml": mac_overhead(window, frames, mac_frame),
    }


# ---------------------------------------------------------------- the system


def _collinear(points) -> bool:
    p = np.asarray(points, float)
    v1, v2 = p[1] - p[0], p[2] - p[0]
    return abs(v1[0] * v2[1] - v1[1] * v2[0]) < 1e-9


def neighbour_map(positions, count: int = NEIGHBOUR_COUNT) -> dict[int, tuple[int, ...]]:
    """Nearest ``count`` other units per unit, skipping choices collinear with those already made.

    Ties in distance go to the lower unit id.
    """
    positions = np.asarray(positions, float)
    result = {}
    for i, p in enumerate(positions):
        order = sorted((float(np.linalg.norm(q - p)), j) for j, q in enumerate(positions) if j != i)
        chosen: list[int] = []
        for _, j in order:
            if len(chosen) == count:
                break
            if len(chosen) == 1 and _collinear([p, positions[chosen[0]], positions[j]]):
                continue
            chosen.append(j)
        result[i] = tuple(chosen)
    return result


@dataclass(frozen=True)
class MimoSystem:
    positions: tuple = tuple((x, y, CEILING) for x, y in TRANSCEIVER_XY)
    fov_deg: float = MIMO_FOV_DEG
    tx_power: float = MIMO_TX_POWER
    tx_lambertian: float = field(default_factory=lambda: lambertian_order(75.0))
    pd_area: float = MIMO_PD_AREA
    cpc_index: float = MIMO_CPC_INDEX
    neighbours: int = NEIGHBOUR_COUNT
    target_height: float = TARGET_HEIGHT
    duplicate_radius: float = RANGE_RESOLUTION
    association_tolerance: float = RANGE_RESOLUTION
    n_slots: int = FRAME_SLOTS
    slot_width: float = SLOT_WIDTH

    @property
    def zone_count(self) -> int:
        return len(self.positions)

    @property
    def neighbour_of(self) -> dict[int, tuple[int, ...]]:
        return neighbour_map([p[:2] for p in self.positions], self.neighbours)

    @property
    def footprint_radius(self) -> float:
        return max_range(self.fov_deg, self.positions[0][2], self.target_height)

    @property
    def frames_per_cycle(self) -> int:
        return self.zone_count * (self.neighbours + 1)

    def config(self, tx: int, rx: int) -> TransceiverConfig:
        return TransceiverConfig(tuple(self.positions[tx]), tuple(self.positions[rx]),
                                 self.tx_power, self.tx_lambertian, self.pd_area, self.fov_deg,
                                 self.cpc_index)

    def schedule(self) -> list[Frame]:
        """Monostatic frame of each zone followed by its neighbours' bistatic frames."""
        frames = []
        neighbours = self.neighbour_of
        for zone in range(self.zone_count):
            for tx in (zone, *neighbours[zone]):
                cfg = self.config(tx, zone)
                frames.append(Frame(tx, zone, cfg, Receiver.from_config(cfg)))
        return frames

    def covered(self, xy) -> bool:
        xy = np.asarray(xy, float)
        return any(np.hypot(*(xy - np.asarray(p[:2]))) <= self.footprint_radius + 1e-12
                   for p in self.positions)


@dataclass
class ZoneReport:
    zone: int
    count: int
    ranges: list
    estimates: list


@dataclass
class CycleResult:
    zones: list
    estimates: list  # PositionEstimate after duplicate removal
    frames: int

    @property
    def count(self) -> int:
        return len(self.estimates)


def eliminate_duplicates(estimates, radius: float) -> list:
    """Greedy merge: keep an estimate unless it lies within ``radius`` of one already kept.

    Localized estimates are preferred over unlocalized ones, then lower residuals.
    """
    ordered = sorted(estimates, key=lambda e: (not e.localized, e.residual))
    kept: list = []
    for est in ordered:
        if all(math.hypot(est.x - k.x, est.y - k.y) >= radius for k in kept):
            kept.append(est)
    return kept


def associate_detections(detections, receivers, drop: float, radius: float,
                         tolerance: float = RANGE_RESOLUTION) -> list:
    """One estimate per target from the monostatic detections of all zones.

    ``detections`` holds (zone, slant range, estimate) triples. Estimates are
    taken best first (localized, then lowest residual). An accepted localized
    estimate also explains every other zone's detection whose range matches
    the estimate's slant distance to that zone's receiver within
    ``tolerance``, so a target seen by overlapping footprints counts once.
    Estimates explaining more detections of other zones are taken first.
    Estimates within ``radius`` of an accepted one are dropped as duplicates.
    """
    def consistent(est, m) -> bool:
        other, r1, _ = detections[m]
        rx = receivers[other]
        slant = math.hypot(math.hypot(est.x - rx[0], est.y - rx[1]), drop)
        return abs(slant - r1) <= tolerance

    support = [sum(1 for m in range(len(detections))
                   if detections[m][0] != zone and consistent(est, m)) if est.localized else 0
               for zone, _, est in detections]
    order = sorted(range(len(detections)),
                   key=lambda i: (not detections[i][2].localized, -support[i],
                                  detections[i][2].residual, i))
    explained: set[int] = set()
    kept: list = []
    for i in order:
        if i in explained:
            continue
        zone, _, est = detections[i]
        if any(math.hypot(est.x - k.x, est.y - k.y) < radius for k in kept):
            continue
        kept.append(est)
        if not est.localized:
            continue
        for m, (other, _, _) in enumerate(detections):
            if m != i and other != zone and consistent(est, m):
                explained.add(m)
    return kept


def arrival_times(z: np.ndarray, marked: np.ndarray, slot_width: float = SLOT_WIDTH,
                  resolution: float = 1e-10) -> list[float]:
    """Sub-slot arrival time of each marked slot from the energy split with its neighbours."""
    times = []
    n = len(z)
    for j in np.flatnonzero(marked):
        left = z[j - 1] if j > 0 else 0.0
        right = z[j + 1] if j + 1 < n else 0.0
        if right >= left:
            total = z[j] + right
            frac = right / total if total > 0 else 0.0
            start = j
        else:
            total = left + z[j]
            frac = z[j] / total if total > 0 else 0.0
            start = j - 1
        t = (start + min(max(frac, 0.0), 1.0)) * slot_width
        times.append(round(t / resolution) * resolution)
    return times


def local_peaks(z: np.ndarray, marked: np.ndarray) -> np.ndarray:
    """Collapse runs of adjacent marked slots to their local maxima.

    A pulse one slot wide that is not slot-aligned spreads over two slots; only
    the larger side stays marked.
    """
    z = np.asarray(z, float)
    keep = marked.copy()
    n = len(z)
    for j in np.flatnonzero(marked):
        left = z[j - 1] if j > 0 and marked[j - 1] else -math.inf
        right = z[j + 1] if j + 1 < n and marked[j + 1] else -math.inf
        if z[j] <= left or z[j] < right:
            keep[j] = False
    return keep


def bistatic_window(r1: float, zone_xy, anchor_xy, drop: float,
                    margin: float = RANGE_RESOLUTION) -> tuple[float, float]:
    """Feasible total path length (m) of the bistatic echo of a target at slant range ``r1``.

    The target lies on a circle around the receiver's ground point; the anchor's
    range is bounded by the nearest and farthest points of that circle.
    """
    h1 = horizontal_range(r1, drop)
    spacing = float(np.hypot(*(np.asarray(anchor_xy, float) - np.asarray(zone_xy, float))))
    near = math.hypot(abs(spacing - h1), drop)
    far = math.hypot(spacing + h1, drop)
    return r1 + near - margin, r1 + far + margin


def _locate(zone_xy, anchors_xy, r1, bistatic_rows, thresholds, slot_width, drop, bounds,
            footprint) -> PositionEstimate:
    """Trilaterate one monostatic detection from the strongest echo in each bistatic window."""
    ranges = [horizontal_range(r1, drop)]
    for k, (row, (low, _)) in enumerate(zip(bistatic_rows, thresholds)):
        lo, hi = bistatic_window(r1, zone_xy, anchors_xy[k + 1], drop)
        first = max(int(math.floor(lo / SPEED_OF_LIGHT / slot_width)) - 1, 0)
        last = min(int(math.ceil(hi / SPEED_OF_LIGHT / slot_width)), len(row) - 1)
        if last < first:
            return PositionEstimate(float(zone_xy[0]), float(zone_xy[1]), localized=False)
        j = first + int(np.argmax(row[first:last + 1]))
        if row[j] < low:
            return PositionEstimate(float(zone_xy[0]), float(zone_xy[1]), localized=False)
        marked = np.zeros(len(row), bool)
        marked[j] = True
        path = SPEED_OF_LIGHT * arrival_times(row, marked, slot_width)[0]
        ranges.append(horizontal_range(max(path - r1, drop), drop))
    try:
        est = least_squares_position(anchors_xy, ranges, bounds)
    except ValueError:
        return PositionEstimate(float(zone_xy[0]), float(zone_xy[1]), localized=False)
    if math.hypot(est.x - zone_xy[0], est.y - zone_xy[1]) > footprint + 2 * RANGE_RESOLUTION:
        return PositionEstimate(float(zone_xy[0]), float(zone_xy[1]), localized=False)
    return est


def run_scan_cycle(system: MimoSystem, frames_z: np.ndarray, thresholds: np.ndarray,
                   bounds: tuple[float, float] = (4.0, 8.0)) -> CycleResult:
    """Detect, range, localize and de-duplicate from one cycle of distinguisher outputs.

    ``frames_z`` holds one row of slot values per scheduled frame (zone-major,
    monostatic first) and ``thresholds`` one (D_thL, D_thH) pair per frame.
    Monostatic frames are counted with the dual-threshold receiver; each
    monostatic range then picks the strongest echo inside the trip-time window
    it allows in each neighbour's bistatic frame.
    """
    frames_z = np.asarray(frames_z, float)
    thresholds = np.asarray(thresholds, float)
    per_zone = system.neighbours + 1
    if frames_z.shape[0] != system.frames_per_cycle:
        raise ValueError(f"expected {system.frames_per_cycle} frames, got {frames_z.shape[0]}")
    drop = system.positions[0][2] - system.target_height
    neighbours = system.neighbour_of
    zones = []
    every = []
    for zone in range(system.zone_count):
        rows = frames_z[zone * per_zone:(zone + 1) * per_zone]
        limits = thresholds[zone * per_zone:(zone + 1) * per_zone]
        low, high = limits[0]
        marked = local_peaks(rows[0], sor_masks(rows[0], low, high)[0])
        mono = [range_monostatic(t) for t in arrival_times(rows[0], marked, system.slot_width)]
        zone_xy = np.asarray(system.positions[zone][:2], float)
        anchors = np.array([zone_xy] + [system.positions[k][:2] for k in neighbours[zone]], float)
        estimates = [_locate(zone_xy, anchors, r1, rows[1:], limits[1:], system.slot_width, drop,
                             bounds, system.footprint_radius) for r1 in mono]
        zones.append(ZoneReport(zone, len(mono), mono, estimates))
        every.extend(estimates)
    detections = [(z.zone, r1, est) for z in zones for r1, est in zip(z.ranges, z.estimates)]
    kept = associate_detections(detections, [p[:2] for p in system.positions], drop,
                                system.duplicate_radius, system.association_tolerance)
    return CycleResult(zones, kept, system.frames_per_cycle)


def write_cycle_csv(rows, path, append: bool = False) -> None:
    """rows: (cycle, zone, target_id, x_est, y_est, x_true, y_true, counted)."""
    with open(path, "a" if append else "w", newline="") as fh:
        writer = csv.writer(fh)
        if not append:
            writer.writerow(["cycle", "zone", "target_id", "x_est", "y_est", "x_true", "y_true",
                             "counted"])
        for row in rows:
            writer.writerow([row[0], row[1], row[2]] + [f"{v:.4f}" for v in row[3:7]] + [row[7]])


# ---------------------------------------------------------------- rendering


@dataclass
class MimoFrontEnd:
    """Slot-level snapshots of every scheduled frame for a set of targets."""

    system: MimoSystem
    env: Environment
    fidelity: str = "desk"
    noise: NoiseModel | None = None

    def __post_init__(self):
        self.frames = self.system.schedule()
        self.engine = SceneEngine(self.env, self.frames, self.fidelity)
        if self.noise is None:
            background = lamp_background_current(self.system.pd_area) if self.env.lamps else 0.0
            self.noise = NoiseModel(MIMO_THERMAL_DENSITY, background, RECEIVER_BANDWIDTH)
        self.sigma_t = math.sqrt(noise_variance(self.noise))

    def clean(self, targets) -> np.ndarray:
        """Noiseless slot amplitudes (A), one row per frame."""
        echoes = self.engine.target_echoes(targets)
        occluders = target_boxes(list(targets))
        out = np.zeros((len(self.frames), self.system.n_slots))
        scale = self.noise.responsivity
        for f in range(len(self.frames)):
            bg = self.engine.shadowed_background(f, occluders)
            both = echoes[f].merged(bg)
            out[f] = split_into_slots(both.delay, scale * both.power, self.system.n_slots,
                                      self.system.slot_width)
        return out

    def observe(self, targets, rng: np.random.Generator) -> np.ndarray:
        clean = self.clean(targets)
        return clean + rng.normal(0.0, self.sigma_t, clean.shape)

    def thresholds(self, noise_factor: float = 1.0, false_alarm: float | None = 1e-3) -> np.ndarray:
        """Per-frame (D_thL, D_thH) from each frame's edge link budget.

        Monostatic frames use the closed-form edge echo; bistatic frames scale it
        by the ratio of the bistatic to monostatic geometry for the actual anchor.
        ``noise_factor`` scales the noise std for the distinguisher output, and
        ``false_alarm`` (None disables) floors the monostatic D_thL against
        noise-only slots. Bistatic frames keep their Bayes thresholds: they are
        only searched inside the window implied by a monostatic detection.
        """
        mu_rho, sigma_rho = colour_moments()
        rows = []
        for frame in self.frames:
            mean = self._edge_echo(frame) * self.noise.responsivity
            stats = SignalStats(mean * mu_rho, mean * sigma_rho, self.sigma_t * noise_factor)
            low, high = sor_thresholds(stats)
            if false_alarm is not None and frame.tx == frame.rx:
                low, high = floored_thresholds(low, high, self.sigma_t * noise_factor, false_alarm)
            rows.append((low, high))
        return np.array(rows)

    def _edge_echo(self, frame: Frame) -> float:
        """Unit-reflectivity echo (W) of the weakest in-footprint edge point, cross-section D_A_MIN."""
        cfg = frame.config
        rx = np.asarray(cfg.rx_position, float)
        tx = np.asarray(cfg.tx_position, float)
        radius = self.system.footprint_radius
        n = cfg.tx_lambertian
        best = math.inf
        for angle in np.linspace(0.0, 2 * math.pi, 16, endpoint=False):
            p = np.array([rx[0] + radius * math.cos(angle), rx[1] + radius * math.sin(angle),
                          self.system.target_height])
            d1 = np.linalg.norm(p - tx)
            d2 = np.linalg.norm(p - rx)
            cos_tx = (tx[2] - p[2]) / d1
            cos_rx = (rx[2] - p[2]) / d2
            power = ((n + 1) * 2 * cfg.tx_power * D_A_MIN * cfg.rx_area * cfg.gain
                     * cos_tx ** n * cos_tx * cos_rx * cos_rx / (4 * math.pi ** 2 * d1 ** 2 * d2 ** 2))
            best = min(best, power)
        return best
