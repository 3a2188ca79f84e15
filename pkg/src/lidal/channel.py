"""Closed-form link budgets and the Lambertian ray tracer for LiDAL channels."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .env import (ElementSet, Environment, TargetState, discretize_surfaces)
from .geometry import Boxes, furniture_boxes, lifted, segments_blocked, target_boxes

SPEED_OF_LIGHT = 299_792_458.0
BIN_WIDTH = 1e-11
CHANNEL_WINDOW = 60e-9
DOWN = (0.0, 0.0, -1.0)


def max_range(fov_deg: float, d_o: float, h: float) -> float:
    """Largest horizontal distance at which a target of height ``h`` stays in the FOV."""
    if d_o <= h:
        raise ValueError(f"mount height {d_o} m must exceed target height {h} m")
    return math.tan(math.radians(fov_deg)) * (d_o - h)


def lambertian_order(half_angle_deg: float) -> float:
    if not 0.0 < half_angle_deg < 90.0:
        raise ValueError("semi-angle at half power must lie in (0, 90) degrees")
    return -math.log(2.0) / math.log(math.cos(math.radians(half_angle_deg)))


def concentrator_gain(index: float, fov_deg: float) -> float:
    if not 0.0 < fov_deg <= 90.0:
        raise ValueError("concentrator FOV must lie in (0, 90] degrees")
    return index**2 / math.sin(math.radians(fov_deg)) ** 2


@dataclass(frozen=True)
class TransceiverConfig:
    tx_position: tuple[float, float, float] = (2.0, 4.0, 3.0)
    rx_position: tuple[float, float, float] = (2.0, 4.0, 3.0)
    tx_power: float = 18.0
    tx_lambertian: float = field(default_factory=lambda: lambertian_order(75.0))
    rx_area: float = 20e-6
    rx_fov_deg: float = 43.8
    concentrator_index: float = 1.7
    filter_transmission: float = 1.0
    responsivity: float = 0.4
    tx_normal: tuple[float, float, float] = DOWN
    rx_normal: tuple[float, float, float] = DOWN

    def __post_init__(self):
        if self.tx_power <= 0:
            raise ValueError("transmit power must be positive")
        if not 0 < self.rx_fov_deg < 90:
            raise ValueError("receiver FOV must lie in (0, 90) degrees")
        if self.concentrator_index < 1:
            raise ValueError("concentrator refractive index must be >= 1")
        if not 0 <= self.filter_transmission <= 1:
            raise ValueError("filter transmission must lie in [0, 1]")

    @property
    def monostatic(self) -> bool:
        return tuple(self.tx_position) == tuple(self.rx_position)

    @property
    def gain(self) -> float:
        return concentrator_gain(self.concentrator_index, self.rx_fov_deg)

    def swapped(self) -> "TransceiverConfig":
        from dataclasses import replace
        return replace(self, tx_position=self.rx_position, rx_position=self.tx_position,
                       tx_normal=self.rx_normal, rx_normal=self.tx_normal)


@dataclass(frozen=True)
class LinkGeometry:
    """Ranges (slant, metres) and angles (radians) of a single-bounce LiDAL link."""

    d_o: float
    h: float
    R_1: float
    R_2: float
    theta: float
    phi: float
    phi1: float

    def __post_init__(self):
        if self.R_1 < 0 or self.R_2 < 0:
            raise ValueError("ranges must be non-negative")
        if self.d_o <= self.h:
            raise ValueError("d_o must exceed h")


def edge_geometry(fov_deg: float, d_o: float = 3.0, h: float = 1.7,
                  tx_offset_factor: float = 1.0) -> LinkGeometry:
    """Target top at the footprint edge; the transmitter sits ``tx_offset_factor`` x R_Max away.

    Factor 1 is the collocated (monostatic) case; factor 3 is the distant-anchor
    bistatic case.
    """
    radius = max_range(fov_deg, d_o, h)
    drop = d_o - h
    r_tx = math.hypot(tx_offset_factor * radius, drop)
    r_rx = math.hypot(radius, drop)
    return LinkGeometry(d_o, h, r_tx, r_rx, math.acos(drop / r_tx), math.acos(drop / r_tx),
                        math.acos(drop / r_rx))


def received_power_bistatic_max(cfg: TransceiverConfig, geom: LinkGeometry, rho: float,
                                d_A: float, n_ele: float = 1.0) -> float:
    n = cfg.tx_lambertian
    scale = (n + 1) * (n_ele + 1) / (4 * math.pi**2 * geom.R_1**2 * geom.R_2**2)
    angles = (math.cos(geom.theta) ** n * math.cos(geom.phi) * math.cos(geom.phi1) ** n_ele
              * math.cos(math.radians(cfg.rx_fov_deg)))
    return (scale * cfg.filter_transmission * cfg.gain * cfg.tx_power * d_A * rho * cfg.rx_area
            * angles)


def received_power_monostatic_max(cfg: TransceiverConfig, geom: LinkGeometry, rho: float,
                                  d_A: float, n_ele: float = 1.0) -> float:
    n = cfg.tx_lambertian
    slant_sq = geom.R_1**2
    scale = (n + 1) * (n_ele + 1) / (4 * math.pi**2 * slant_sq**2)
    return (scale * cfg.filter_transmission * cfg.gain * cfg.tx_power * d_A * rho * cfg.rx_area
            * math.cos(math.radians(cfg.rx_fov_deg)) ** (n + 3))


# ---------------------------------------------------------------- impulse responses


@dataclass
class ImpulseResponse:
    """Received power per time bin for a transmitted impulse of one bin width."""

    bin_width: float
    power_bins: np.ndarray
    t0: float = 0.0
    tx_power: float = 1.0

    def __post_init__(self):
        if self.bin_width <= 0:
            raise ValueError("bin width must be positive")
        self.power_bins = np.asarray(self.power_bins, float)
        if np.any(self.power_bins < 0):
            raise ValueError("impulse response bins must be non-negative")

    @property
    def gains(self) -> np.ndarray:
        return self.power_bins / self.tx_power

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.bin_width * np.arange(len(self.power_bins))

    @property
    def total_gain(self) -> float:
        return float(self.gains.sum())

    def __add__(self, other: "ImpulseResponse") -> "ImpulseResponse":
        if other.bin_width != self.bin_width or other.t0 != self.t0:
            raise ValueError("impulse responses on different grids")
        n = max(len(self.power_bins), len(other.power_bins))
        total = np.zeros(n)
        total[: len(self.gains)] += self.gains
        total[: len(other.gains)] += other.gains
        return ImpulseResponse(self.bin_width, total * self.tx_power, self.t0, self.tx_power)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["time_ns", "power_w"])
            for t, p in zip(self.times, self.power_bins):
                writer.writerow([f"{t * 1e9:.4f}", repr(float(p))])


@dataclass
class PathSet:
    """Individual propagation paths: gain, delay and the last reflecting point."""

    gain: np.ndarray
    delay: np.ndarray
    arrival_point: np.ndarray  # (P, 3) position of the final reflection
    order: np.ndarray
    via_target: np.ndarray

    @staticmethod
    def empty() -> "PathSet":
        return PathSet(np.zeros(0), np.zeros(0), np.zeros((0, 3)), np.zeros(0, int),
                       np.zeros(0, bool))

    @staticmethod
    def concat(parts: list["PathSet"]) -> "PathSet":
        parts = [p for p in parts if len(p.gain)]
        if not parts:
            return PathSet.empty()
        return PathSet(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                         ("gain", "delay", "arrival_point", "order", "via_target")))

    def select(self, mask) -> "PathSet":
        return PathSet(self.gain[mask], self.delay[mask], self.arrival_point[mask],
                       self.order[mask], self.via_target[mask])

    def histogram(self, bin_width: float = BIN_WIDTH, window: float = CHANNEL_WINDOW,
                  tx_power: float = 1.0) -> ImpulseResponse:
        nbins = int(round(window / bin_width))
        idx = np.floor(self.delay / bin_width + 1e-9).astype(int)
        keep = (idx >= 0) & (idx < nbins)
        bins = np.bincount(idx[keep], weights=self.gain[keep], minlength=nbins)
        return ImpulseResponse(bin_width, bins * tx_power, 0.0, tx_power)


@dataclass(frozen=True)
class Receiver:
    """Point receiver with a cone FOV; ``gain`` multiplies A_R*cos(psi)."""

    position: np.ndarray
    normal: np.ndarray
    area: float
    fov_deg: float
    gain: float

    @staticmethod
    def from_config(cfg: TransceiverConfig) -> "Receiver":
        return Receiver(np.asarray(cfg.rx_position, float), _unit(cfg.rx_normal), cfg.rx_area,
                        cfg.rx_fov_deg, cfg.gain * cfg.filter_transmission)


def _unit(v) -> np.ndarray:
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def source_incidence(elements: ElementSet, position, normal, order: float,
                     boxes: Boxes) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of a Lambertian source's power landing on each element, and the path length."""
    pos = np.asarray(position, float)
    nrm = _unit(normal)
    vec = elements.centers - pos
    dist = np.linalg.norm(vec, axis=1)
    dist = np.where(dist == 0, np.inf, dist)
    cos_src = vec @ nrm / dist
    cos_elem = -np.einsum("ij,ij->i", elements.normals, vec) / dist
    ok = (cos_src > 0) & (cos_elem > 0)
    frac = np.zeros(len(elements))
    frac[ok] = ((order + 1) / (2 * np.pi * dist[ok] ** 2) * cos_src[ok] ** order * cos_elem[ok]
                * elements.areas[ok])
    if ok.any() and len(boxes):
        idx = np.flatnonzero(ok)
        hit = segments_blocked(pos, lifted(elements.centers[idx], elements.normals[idx]), boxes)
        frac[idx[hit]] = 0.0
    return frac, dist


def receiver_coupling(elements: ElementSet, rx: Receiver,
                      boxes: Boxes) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of power incident on each element that re-emits into the receiver."""
    vec = rx.position - elements.centers
    dist = np.linalg.norm(vec, axis=1)
    dist = np.where(dist == 0, np.inf, dist)
    cos_elem = np.einsum("ij,ij->i", elements.normals, vec) / dist
    cos_rx = -(vec @ rx.normal) / dist
    in_fov = cos_rx >= math.cos(math.radians(rx.fov_deg)) - 1e-12
    ok = (cos_elem > 0) & (cos_rx > 0) & in_fov & (elements.reflectivity > 0)
    frac = np.zeros(len(elements))
    o = elements.order[ok]
    frac[ok] = (elements.reflectivity[ok] * (o + 1) / (2 * np.pi * dist[ok] ** 2)
                * cos_elem[ok] ** o * rx.area * cos_rx[ok] * rx.gain)
    if ok.any() and len(boxes):
        idx = np.flatnonzero(ok)
        hit = segments_blocked(rx.position, lifted(elements.centers[idx], elements.normals[idx]),
                               boxes)
        frac[idx[hit]] = 0.0
    return frac, dist


def trace_paths(env: Environment, cfg: TransceiverConfig, targets=(), max_order: int = 2,
                fidelity: str = "desk", sizes=None, target_paths_only: bool = False,
                receiver: Receiver | None = None, include_room: bool = True) -> PathSet:
    """Enumerate first- and second-order Lambertian paths tx -> element(s) -> rx."""
    if max_order not in (1, 2):
        raise ValueError("max_order must be 1 or 2")
    targets = list(targets)
    boxes = Boxes.concat([furniture_boxes(env), target_boxes(targets)])
    rx = receiver or Receiver.from_config(cfg)
    parts = []

    first = discretize_surfaces(env, 1, targets, fidelity, sizes, include_room)
    inc, d_in = source_incidence(first, cfg.tx_position, cfg.tx_normal, cfg.tx_lambertian, boxes)
    out, d_out = receiver_coupling(first, rx, boxes)
    g = inc * out
    keep = g > 0
    is_target = first.owner <= -2
    if target_paths_only:
        keep &= is_target
    parts.append(PathSet(g[keep], (d_in[keep] + d_out[keep]) / SPEED_OF_LIGHT,
                         first.centers[keep], np.ones(keep.sum(), int), is_target[keep]))

    if max_order == 2:
        second = discretize_surfaces(env, 2, targets, fidelity, sizes, include_room)
        inc2, d_in2 = source_incidence(second, cfg.tx_position, cfg.tx_normal, cfg.tx_lambertian,
                                       boxes)
        out2, d_out2 = receiver_coupling(second, rx, boxes)
        src = np.flatnonzero((inc2 > 0) & (second.reflectivity > 0))
        dst = np.flatnonzero(out2 > 0)
        tgt2 = second.owner <= -2
        parts.append(_second_order(second, src, dst, inc2, d_in2, out2, d_out2, boxes, tgt2,
                                   target_paths_only))
    return PathSet.concat(parts)


def _second_order(el: ElementSet, src, dst, inc, d_in, out, d_out, boxes, is_target,
                  target_only: bool, chunk: int = 250_000) -> PathSet:
    parts = []
    if len(src) == 0 or len(dst) == 0:
        return PathSet.empty()
    step = max(1, chunk // len(dst))
    for a in range(0, len(src), step):
        i = np.repeat(src[a:a + step], len(dst))
        j = np.tile(dst, len(src[a:a + step]))
        pair_ok = i != j
        if target_only:
            pair_ok &= is_target[i] | is_target[j]
        i, j = i[pair_ok], j[pair_ok]
        vec = el.centers[j] - el.centers[i]
        dist = np.linalg.norm(vec, axis=1)
        cos_i = np.einsum("ij,ij->i", el.normals[i], vec) / dist
        cos_j = -np.einsum("ij,ij->i", el.normals[j], vec) / dist
        ok = (cos_i > 0) & (cos_j > 0)
        i, j, dist, cos_i, cos_j = i[ok], j[ok], dist[ok], cos_i[ok], cos_j[ok]
        if len(i) == 0:
            continue
        o = el.order[i]
        g = (inc[i] * el.reflectivity[i] * (o + 1) / (2 * np.pi * dist**2) * cos_i**o * cos_j
             * el.areas[j] * out[j])
        if len(boxes):
            hit = segments_blocked(lifted(el.centers[i], el.normals[i]),
                                   lifted(el.centers[j], el.normals[j]), boxes)
            g[hit] = 0.0
        keep = g > 0
        parts.append(PathSet(g[keep], (d_in[i] + dist + d_out[j])[keep] / SPEED_OF_LIGHT,
                             el.centers[j][keep], np.full(keep.sum(), 2),
                             (is_target[i] | is_target[j])[keep]))
    return PathSet.concat(parts)


def impulse_response(env: Environment, cfg: TransceiverConfig, targets=(), max_order: int = 2,
                     fidelity: str = "desk", sizes=None, bin_width: float = BIN_WIDTH,
                     window: float = CHANNEL_WINDOW, target_paths_only: bool = False
                     ) -> ImpulseResponse:
    """Ray-traced LiDAL impulse response (power per bin for a one-bin pulse of power P_t)."""
    paths = trace_paths(env, cfg, targets, max_order, fidelity, sizes, target_paths_only)
    return paths.histogram(bin_width, window, cfg.tx_power)


def channel_bandwidth(ir: ImpulseResponse) -> float:
    """3 dB bandwidth: first frequency where |H(f)| drops to |H(0)|/sqrt(2)."""
    h = np.asarray(ir.power_bins, float)
    if not np.any(h > 0):
        raise ValueError("all-zero impulse response has no bandwidth")
    size = 1 << int(math.ceil(math.log2(4 * len(h))))
    spectrum = np.abs(np.fft.rfft(h, size))
    freqs = np.fft.rfftfreq(size, ir.bin_width)
    ratio = spectrum / spectrum[0]
    below = np.flatnonzero(ratio <= 1 / math.sqrt(2))
    if len(below) == 0:
        return 1.0 / (2 * ir.bin_width)
    k = below[0]
    f0, f1, r0, r1 = freqs[k - 1], freqs[k], ratio[k - 1], ratio[k]
    return float(f0 + (r0 - 1 / math.sqrt(2)) * (f1 - f0) / (r0 - r1))


def rms_delay_spread(ir: ImpulseResponse) -> float:
    h = ir.power_bins
    total = h.sum()
    if total <= 0:
        raise ValueError("all-zero impulse response")
    t = ir.times
    mean = (t * h).sum() / total
    return float(math.sqrt(max(((t - mean) ** 2 * h).sum() / total, 0.0)))


# ---------------------------------------------------------------- bandwidth study

STUDY_FOV_DEG = 43.0
STUDY_MONOSTATIC = ((2.0, 4.0, 3.0), (2.0, 4.0, 3.0))
STUDY_BISTATIC = ((2.0, 5.0, 3.0), (2.0, 4.0, 3.0))


def study_config(mode: str) -> TransceiverConfig:
    tx, rx = {"monostatic": STUDY_MONOSTATIC, "bistatic": STUDY_BISTATIC}[mode]
    return TransceiverConfig(tx_position=tx, rx_position=rx, rx_fov_deg=STUDY_FOV_DEG)


def uniform_footprint_targets(cfg: TransceiverConfig, count: int, rng: np.random.Generator,
                              env: Environment, height: float = 1.7, rho: float = 0.669):
    """Targets placed uniformly (by area) inside the receiver footprint, random heading."""
    radius = max_range(cfg.rx_fov_deg, cfg.rx_position[2], height)
    cx, cy = cfg.rx_position[0], cfg.rx_position[1]
    out = []
    while len(out) < count:
        r = radius * math.sqrt(rng.uniform())
        a = rng.uniform(0, 2 * math.pi)
        t = TargetState((cx + r * math.cos(a), cy + r * math.sin(a)),
                        int(rng.integers(8)) * 45, rho, id=0, height_m=height)
        if t.inside_room(env):
            out.append(t)
    return out


def bandwidth_study(mode: str, placements: int, rng: np.random.Generator, fidelity: str = "desk",
                    env: Environment | None = None, target_paths_only: bool = True) -> list[dict]:
    """3 dB bandwidth and received power for targets spread over the footprint.

    The room is empty with a non-reflecting floor. By default only paths that
    touch the target are kept, i.e. the channel created by the target's presence;
    pass ``target_paths_only=False`` for the full response including room echoes.
    """
    env = env or Environment(floor_reflectivity=0.0, name="channel-study")
    cfg = study_config(mode)
    rows = []
    for target in uniform_footprint_targets(cfg, placements, rng, env):
        ir = impulse_response(env, cfg, [target], 2, fidelity,
                              target_paths_only=target_paths_only)
        if not np.any(ir.power_bins > 0):
            continue
        rows.append({
            "x_m": target.position[0], "y_m": target.position[1],
            "heading_deg": target.heading_deg,
            "bandwidth_hz": channel_bandwidth(ir),
            "received_power_w": float(ir.power_bins.sum()),
            "rms_delay_spread_s": rms_delay_spread(ir),
        })
    return rows
