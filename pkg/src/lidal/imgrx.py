"""Single imaging receiver with eight transmitters: pixel geometry, gating, decisions and scans."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import Receiver, TransceiverConfig, lambertian_order
from .detect import SignalStats, floored_thresholds, sor_thresholds
from .disting import SIGNIFICANCE, ccm_slots
from .env import Environment, TargetState, colour_moments, lamp_background_current
from .frontend import PIXEL_THERMAL_DENSITY, RECEIVER_BANDWIDTH, NoiseModel, noise_variance
from .mimo import CEILING, TARGET_HEIGHT, TRANSCEIVER_XY, PositionEstimate
from .geometry import target_boxes
from .scene import Frame, FrameEchoes, SceneEngine

PIXEL_ROWS = 16  # along the room length (y)
PIXEL_COLS = 8  # along the room width (x)
PIXEL_PITCH_M = 1.25e-3
FOOTPRINT_M = 0.5
LENS_FOV_DEG = 72.0
LENS_ENTRANCE_AREA = 9 * math.pi / 4 * 1e-4
LENS_INDEX = 1.5
WORST_CASE_ERROR = FOOTPRINT_M / math.sqrt(2)


def lens_transmission(incidence: float) -> float:
    """Lens transmission factor for an incidence angle in radians."""
    return -0.198 * incidence ** 2 + 0.0425 * incidence + 0.8778


@dataclass(frozen=True)
class ImagingReceiver:
    position: tuple = (2.0, 4.0, CEILING)
    fov_deg: float = LENS_FOV_DEG
    lens_area: float = LENS_ENTRANCE_AREA
    lens_index: float = LENS_INDEX
    rows: int = PIXEL_ROWS
    cols: int = PIXEL_COLS
    pixel_pitch: float = PIXEL_PITCH_M
    footprint: float = FOOTPRINT_M
    target_height: float = TARGET_HEIGHT

    @property
    def pixel_count(self) -> int:
        return self.rows * self.cols

    @property
    def pixel_area(self) -> float:
        return self.pixel_pitch ** 2

    @property
    def array_length(self) -> float:
        return self.rows * self.pixel_pitch

    @property
    def exit_area(self) -> float:
        return self.lens_area * math.sin(math.radians(self.fov_deg)) ** 2 / self.lens_index ** 2

    @property
    def focal_length(self) -> float:
        return self.array_length / (2 * math.tan(math.radians(self.fov_deg)))

    @property
    def max_range(self) -> float:
        return math.tan(math.radians(self.fov_deg)) * (self.position[2] - self.target_height)

    @property
    def zoom_ratio(self) -> float:
        return 2 * self.max_range / self.array_length

    @property
    def min_pixel_distance(self) -> float:
        """Pixel separation needed to resolve targets one footprint apart."""
        return self.footprint / self.zoom_ratio


@dataclass(frozen=True)
class PixelMap:
    """Per-pixel viewing angles (degrees) and footprint centres relative to the receiver."""

    elevation_deg: np.ndarray
    azimuth_deg: np.ndarray
    radius: np.ndarray
    offsets: np.ndarray  # (N_p, 2) footprint centre minus receiver ground point
    origin: tuple
    footprint: float
    rows: int
    cols: int

    @property
    def centres(self) -> np.ndarray:
        return self.offsets + np.asarray(self.origin, float)

    def index(self, row: int, col: int) -> int:
        return row * self.cols + col

    def pixel_of(self, x, y) -> np.ndarray:
        """Pixel index of floor-plane points, -1 outside the imaged grid."""
        x = np.atleast_1d(np.asarray(x, float))
        y = np.atleast_1d(np.asarray(y, float))
        half_w = self.cols * self.footprint / 2
        half_l = self.rows * self.footprint / 2
        col = np.floor((x - self.origin[0] + half_w) / self.footprint).astype(int)
        row = np.floor((y - self.origin[1] + half_l) / self.footprint).astype(int)
        inside = (col >= 0) & (col < self.cols) & (row >= 0) & (row < self.rows)
        return np.where(inside, row * self.cols + col, -1)


def build_pixel_map(rx: ImagingReceiver | None = None, d_o: float | None = None,
                    h: float | None = None, room: tuple[float, float] = (4.0, 8.0)) -> PixelMap:
    rx = rx or ImagingReceiver()
    d_o = rx.position[2] if d_o is None else d_o
    h = rx.target_height if h is None else h
    if d_o <= h:
        raise ValueError("receiver must be above the target plane")
    drop = d_o - h
    half_w = rx.cols * rx.footprint / 2
    half_l = rx.rows * rx.footprint / 2
    ox, oy = rx.position[0], rx.position[1]
    if ox - half_w < -1e-9 or ox + half_w > room[0] + 1e-9 or oy - half_l < -1e-9 \
            or oy + half_l > room[1] + 1e-9:
        raise ValueError("pixel footprints extend beyond the room")
    reach = math.tan(math.radians(rx.fov_deg)) * drop
    if max(half_w, half_l) > reach + 1e-6:
        raise ValueError("pixel grid exceeds the lens field of view")
    rows, cols = np.meshgrid(np.arange(rx.rows), np.arange(rx.cols), indexing="ij")
    dx = ((cols + 0.5) * rx.footprint - half_w).ravel()
    dy = ((rows + 0.5) * rx.footprint - half_l).ravel()
    elevation = np.arctan(np.hypot(dx, dy) / drop)
    azimuth = np.arctan2(dy, dx)
    radius = drop * np.tan(elevation)
    offsets = np.column_stack([radius * np.cos(azimuth), radius * np.sin(azimuth)])
    return PixelMap(np.degrees(elevation), np.degrees(azimuth), radius, offsets, (ox, oy),
                    rx.footprint, rx.rows, rx.cols)


def pixel_localize(pixel: int, pixel_map: PixelMap, target_id: int = -1) -> PositionEstimate:
    if not 0 <= pixel < len(pixel_map.offsets):
        raise ValueError("pixel index out of range")
    x, y = pixel_map.centres[pixel]
    return PositionEstimate(float(x), float(y), target_id)


def grp_partition(pixel_map: PixelMap, transmitters=TRANSCEIVER_XY) -> list[np.ndarray]:
    """Pixel indices per transmitter: the footprints nearest to each transmitter.

    With the default layout every group is a 4 x 4 block of 16 pixels.
    """
    centres = pixel_map.centres
    tx = np.asarray(transmitters, float)
    d = np.linalg.norm(centres[:, None, :] - tx[None], axis=2)
    owner = np.argmin(d, axis=1)  # ties resolve to the lower transmitter id
    return [np.flatnonzero(owner == n) for n in range(len(tx))]


# ---------------------------------------------------------------- distinguishing


def psm(history, current) -> np.ndarray:
    """Latest pixel vector minus the mean of the S earlier ones."""
    history = np.atleast_2d(np.asarray(history, float))
    if len(history) < 1:
        raise ValueError("insufficient history")
    return np.asarray(current, float) - history.mean(axis=0)


def pccm(history, current, noise_std: float, kappa: float = SIGNIFICANCE,
         background=None) -> tuple[np.ndarray, int, np.ndarray]:
    """(weights, displacement, gated output) for pixel vectors.

    The displacement is the lag of the peak of the cross-correlation of the
    latest vector against the history mean over pixel index, measured from the
    history's own autocorrelation peak. Weights mark pixels whose energy moved
    by more than ``kappa`` noise floors within the window; the gated output is
    the weighted excess over the static background (the history median when no
    calibrated background is given).
    """
    history = np.asarray(history, float)
    if history.ndim != 2 or len(history) < 2:
        raise ValueError("insufficient history: at least two earlier pixel vectors are needed")
    current = np.asarray(current, float)
    weights, gated = ccm_slots(history, current, noise_std, kappa, background)
    if not weights.any():
        return weights, 0, np.zeros_like(current)
    mean = history.mean(axis=0)
    cross = np.correlate(current, mean, mode="full")
    auto = np.correlate(mean, mean, mode="full")
    displacement = int(np.argmax(cross)) - int(np.argmax(auto))
    if displacement == 0:
        displacement = 1  # a significant change is motion even if the energy centre stayed
    return weights, displacement, gated


# ---------------------------------------------------------------- decisions


def _neighbours(rows: int, cols: int) -> list[np.ndarray]:
    out = []
    for r in range(rows):
        for c in range(cols):
            idx = [(r + dr) * cols + (c + dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1)
                   if (dr or dc) and 0 <= r + dr < rows and 0 <= c + dc < cols]
            out.append(np.array(idx, int))
    return out


def soimr_decide(z, low, high, rows: int = PIXEL_ROWS, cols: int = PIXEL_COLS) -> set[int]:
    """Marked pixels from the dual-threshold imaging receiver.

    Pixels above ``high`` are occupied and those below ``low`` are empty. A grey
    pixel is marked only when it beats every neighbour that is itself at least
    grey, since a target straddling up to four footprints lights a 2 x 2 block.
    """
    z = np.asarray(z, float).ravel()
    if len(z) != rows * cols:
        raise ValueError("pixel vector does not match the grid")
    low = np.broadcast_to(np.asarray(low, float), z.shape)
    high = np.broadcast_to(np.asarray(high, float), z.shape)
    if np.any(low >= high):
        raise ValueError("D_thL must be below D_thH")
    present = z > high
    lit = z >= low
    marked = set(np.flatnonzero(present).tolist())
    for p in np.flatnonzero(lit & ~present):
        rivals = [q for q in _neighbours(rows, cols)[p] if lit[q]]
        if all(z[p] > z[q] or (z[p] == z[q] and p < q) for q in rivals):
            marked.add(int(p))
    return marked


@dataclass
class GrpScanResult:
    marked: list
    estimates: list
    frames: int

    @property
    def count(self) -> int:
        return len(self.estimates)


def run_grp_scan(pixel_map: PixelMap, groups, observations, thresholds) -> GrpScanResult:
    """Combine the per-frame pixel outputs of one scan cycle and localize the marked pixels.

    ``observations`` holds one pixel vector per transmitter frame; only that
    transmitter's group is read from it. A pixel index marked by two frames
    counts once.
    """
    observations = np.asarray(observations, float)
    if len(observations) != len(groups):
        raise ValueError("one observation per transmitter frame is required")
    combined = np.zeros(pixel_map.rows * pixel_map.cols)
    for frame, group in zip(observations, groups):
        combined[group] = frame[group]
    low, high = thresholds
    marked = sorted(soimr_decide(combined, low, high, pixel_map.rows, pixel_map.cols))
    estimates = [pixel_localize(p, pixel_map) for p in marked]
    return GrpScanResult(marked, estimates, len(groups))


def write_heatmap_csv(z, marked, path, cols: int = PIXEL_COLS) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["row", "col", "energy", "marked"])
        marked = set(marked)
        for p, value in enumerate(np.asarray(z, float).ravel()):
            writer.writerow([p // cols, p % cols, repr(float(value)), int(p in marked)])


# ---------------------------------------------------------------- rendering


@dataclass
class ImagingFrontEnd:
    """Pixel energies (pulse-amplitude equivalent, amperes) of every transmitter frame."""

    env: Environment
    receiver: ImagingReceiver = field(default_factory=ImagingReceiver)
    fidelity: str = "desk"
    transmitters: tuple = TRANSCEIVER_XY
    tx_power: float = 18.0
    noise: NoiseModel | None = None

    def __post_init__(self):
        self.pixel_map = build_pixel_map(self.receiver, room=(self.env.width_m, self.env.length_m))
        self.groups = grp_partition(self.pixel_map, self.transmitters)
        rx_pos = tuple(self.receiver.position)
        # a cone slightly wider than the lens keeps the square grid corners; the
        # pixel projection below applies the square field of view
        self._rx = Receiver(np.asarray(rx_pos, float), np.array([0.0, 0.0, -1.0]),
                            self.receiver.lens_area, 80.0, 1.0)
        order = lambertian_order(75.0)
        self.frames = []
        for n, (x, y) in enumerate(self.transmitters):
            cfg = TransceiverConfig((x, y, CEILING), rx_pos, self.tx_power, order,
                                    self.receiver.lens_area, 80.0, 1.0)
            self.frames.append(Frame(n, -1, cfg, self._rx))
        self.engine = SceneEngine(self.env, self.frames, self.fidelity)
        if self.noise is None:
            background = lamp_background_current(self.receiver.pixel_area) if self.env.lamps else 0.0
            self.noise = NoiseModel(PIXEL_THERMAL_DENSITY, background, RECEIVER_BANDWIDTH)
        self.sigma_t = math.sqrt(noise_variance(self.noise))
        self._thresholds: dict = {}

    def _pixel_energy(self, echoes: FrameEchoes) -> np.ndarray:
        out = np.zeros(self.receiver.pixel_count)
        if len(echoes.power) == 0:
            return out
        rx = np.asarray(self.receiver.position, float)
        points = echoes.point
        depth = rx[2] - points[:, 2]
        plane = rx[2] - self.receiver.target_height
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(depth > 0, plane / depth, np.nan)
        xy = rx[:2] + (points[:, :2] - rx[:2]) * scale[:, None]
        pixel = self.pixel_map.pixel_of(xy[:, 0], xy[:, 1])
        vec = points - rx
        incidence = np.arccos(np.clip(-vec[:, 2] / np.linalg.norm(vec, axis=1), -1, 1))
        power = echoes.power * np.array([lens_transmission(a) for a in incidence])
        keep = (pixel >= 0) & np.isfinite(scale)
        np.add.at(out, pixel[keep], power[keep])
        return out * self.noise.responsivity

    def clean(self, targets) -> np.ndarray:
        targets = list(targets)
        echoes = self.engine.target_echoes(targets)
        occluders = target_boxes(targets)
        rows = []
        for f in range(len(self.frames)):
            both = echoes[f].merged(self.engine.shadowed_background(f, occluders))
            rows.append(self._pixel_energy(both))
        return np.array(rows)

    def observe(self, targets, rng: np.random.Generator) -> np.ndarray:
        clean = self.clean(targets)
        return clean + rng.normal(0.0, self.sigma_t, clean.shape)

    def reference_levels(self) -> np.ndarray:
        """Mean-reflectivity echo of a target centred on each pixel, read in its own frame."""
        if "levels" not in self._thresholds:
            mu_rho, _ = colour_moments()
            levels = np.zeros(self.receiver.pixel_count)
            for n, group in enumerate(self.groups):
                for p in group:
                    x, y = self.pixel_map.centres[p]
                    target = TargetState((float(x), float(y)), 0, mu_rho, 0)
                    echoes = self.engine.target_echoes([target])[n]
                    levels[p] = self._pixel_energy(echoes)[p]
            self._thresholds["levels"] = levels
        return self._thresholds["levels"]

    def thresholds(self, noise_factor: float = 1.0, false_alarm: float | None = 1e-3
                   ) -> tuple[np.ndarray, np.ndarray]:
        """Per-pixel (D_thL, D_thH) from the reference levels and the colour spread."""
        mu_rho, sigma_rho = colour_moments()
        lows, highs = [], []
        noise_std = self.sigma_t * noise_factor
        for level in self.reference_levels():
            if level > 0:
                low, high = sor_thresholds(SignalStats(level, level * sigma_rho / mu_rho, noise_std))
            else:
                # the pixel footprint is hidden (for example under tall furniture)
                low, high = 0.0, noise_std
            if false_alarm is not None:
                low, high = floored_thresholds(low, high, noise_std, false_alarm)
            lows.append(low)
            highs.append(high)
        return np.array(lows), np.array(highs)
