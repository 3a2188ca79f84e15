"""Scenario orchestration: target placement, stepping, shared rendering, metrics and outputs.

Every target count i runs ``iterations`` independent worlds. A world places
i targets, lets them take ``steps`` random steps, renders one noisy snapshot
per position set and hands the last ``steps + 1`` snapshots to a
distinguisher. The counted and localized targets of the final snapshot are
compared with the truth.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .disting import SIGNIFICANCE, bsm_slots, ccm_slots, motion_weights
from .env import (BODY_WIDTH, Environment, EnvironmentConfig, ReflectivityModel, TargetState,
                  build_environment, sample_reflection_factor)
from .imgrx import (ImagingFrontEnd, PixelMap, pccm, pixel_localize, psm, run_grp_scan,
                    soimr_decide)
from .mimo import MimoFrontEnd, MimoSystem, run_scan_cycle
from .mobility import (DIRECTION_HEADINGS, DIRECTIONS, PopulationProcess, build_grid,
                       default_path_interest, default_pathways, interest_cells, nomadic_model,
                       population_events, simulate_pathway, simulate_walk, uniform_model)

SCENARIOS = ("1", "2", "3", "case_study")
SYSTEMS = ("mimo", "img")
DISTINGUISHERS = ("bsm", "ccm", "psm", "pccm")
SCENARIO_CODE = {"1": 1, "2": 2, "3": 3, "case_study": 4}
SYSTEM_CODE = {"mimo": 1, "img": 2}
SCENARIO_ROOM = {"1": "A", "2": "B", "3": "B", "case_study": "B"}
FALSE_ALARM = 1e-3
WALL_MARGIN = BODY_WIDTH / 2 + 0.06
PEDESTRIAN_SPEED = 1.0
NOMADIC_PAUSE_RANGE_S = (0.0, 400.0)


# ---------------------------------------------------------------- metrics


def mape(actual, estimated) -> float:
    """Mean absolute percentage error of counts, in percent."""
    actual = np.asarray(actual, float)
    estimated = np.asarray(estimated, float)
    if actual.shape != estimated.shape:
        raise ValueError("actual and estimated counts differ in length")
    if len(actual) == 0:
        raise ValueError("no counts to compare")
    if np.any(actual <= 0):
        raise ValueError("actual counts must be positive")
    return float(np.mean(np.abs(actual - estimated) / actual) * 100.0)


def drmse(actual, estimated) -> float:
    """sqrt(mean dx^2 + mean dy^2) over matched (truth, estimate) pairs."""
    actual = np.asarray(actual, float).reshape(-1, 2)
    estimated = np.asarray(estimated, float).reshape(-1, 2)
    if len(actual) != len(estimated):
        raise ValueError("pairs must be matched one to one")
    if len(actual) == 0:
        raise ValueError("no matched pairs")
    err = estimated - actual
    return float(math.sqrt(np.mean(err[:, 0] ** 2) + np.mean(err[:, 1] ** 2)))


def cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF as (value, fraction <= value) steps at each distinct value."""
    values = np.sort(np.asarray(values, float))
    if len(values) == 0:
        raise ValueError("empty sample")
    distinct, counts = np.unique(values, return_counts=True)
    fractions = np.cumsum(counts) / len(values)
    return [(float(v), float(f)) for v, f in zip(distinct, fractions)]


def greedy_match(truth, estimates, gate: float = math.inf) -> list[tuple[int, int]]:
    """Closest-first one-to-one pairing of truths and estimates; pairs beyond ``gate`` are dropped."""
    truth = np.asarray(truth, float).reshape(-1, 2)
    estimates = np.asarray(estimates, float).reshape(-1, 2)
    if len(truth) == 0 or len(estimates) == 0:
        return []
    d = np.linalg.norm(truth[:, None] - estimates[None], axis=2)
    order = np.argsort(d, axis=None, kind="stable")
    used_t, used_e, pairs = set(), set(), []
    for flat in order:
        t, e = divmod(int(flat), len(estimates))
        if d[t, e] > gate:
            break
        if t in used_t or e in used_e:
            continue
        used_t.add(t)
        used_e.add(e)
        pairs.append((t, e))
    return sorted(pairs)


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "1"
    system: str = "mimo"
    distinguisher: str = "ccm"
    max_targets: int = 15
    iterations: int = 50
    seed: int = 0
    fidelity: str = "desk"
    steps: int = 4
    step_m: float = 0.3
    p_move: float = 0.98
    mobility_factor: float | None = None
    min_spacing_m: float = 0.5
    kappa: float = SIGNIFICANCE
    match_gate_m: float = 1.0
    tracking: bool = True
    # case study
    behaviour: str = "pedestrian"
    mobility_model: str = "pathway"
    duration_s: float = 3600.0
    snapshot_rate: float = 5.0
    buffer_snapshots: int = 1000
    evaluation_interval_s: float = 10.0
    arrival_rate: float = 12.0
    departure_rate: float = 14.0

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.system not in SYSTEMS:
            raise ValueError(f"unknown system {self.system!r}")
        if self.distinguisher not in DISTINGUISHERS:
            raise ValueError(f"unknown distinguisher {self.distinguisher!r}")
        if self.iterations < 1 or self.max_targets < 1:
            raise ValueError("iterations and max_targets must be at least 1")
        if self.steps < 1:
            raise ValueError("at least one step is needed to build a history")
        if self.mobility_factor is not None and not 0 <= self.mobility_factor <= 1:
            raise ValueError("mobility factor must lie in [0, 1]")
        if self.behaviour not in ("pedestrian", "nomadic"):
            raise ValueError(f"unknown behaviour {self.behaviour!r}")
        if self.mobility_model not in ("pathway", "random_walk"):
            raise ValueError(f"unknown mobility model {self.mobility_model!r}")
        if self.arrival_rate >= self.departure_rate:
            raise ValueError("arrival rate must be below the departure rate")

    @property
    def move_probability(self) -> float:
        return self.p_move if self.mobility_factor is None else self.mobility_factor

    @property
    def room(self) -> str:
        return SCENARIO_ROOM[self.scenario]


def canonical_distinguisher(system: str, name: str) -> str:
    """The imaging receiver runs the pixel forms of the two distinguishers."""
    if system == "img":
        return {"bsm": "psm", "ccm": "pccm"}.get(name, name)
    return {"psm": "bsm", "pccm": "ccm"}.get(name, name)


@dataclass
class IterationRow:
    scenario: str
    system: str
    distinguisher: str
    mobility_factor: float
    n_targets: int
    iteration: int
    actual: int
    estimated: int
    ape: float | None
    drmse: float | None
    errors: list = field(default_factory=list, repr=False)  # matched (dx, dy)


@dataclass
class MetricsReport:
    config: ScenarioConfig
    rows: list

    def counts(self) -> list[int]:
        return sorted({r.n_targets for r in self.rows if r.actual > 0})

    def _rows_for(self, n: int) -> list:
        return [r for r in self.rows if r.n_targets == n and r.actual > 0]

    def mape_by_count(self) -> dict[int, float]:
        return {n: mape([r.actual for r in self._rows_for(n)], [r.estimated for r in self._rows_for(n)])
                for n in self.counts()}

    def mape_stderr_by_count(self) -> dict[int, float]:
        out = {}
        for n in self.counts():
            ape = np.array([r.ape for r in self._rows_for(n)])
            out[n] = float(ape.std(ddof=1) / math.sqrt(len(ape))) if len(ape) > 1 else 0.0
        return out

    def drmse_by_count(self) -> dict[int, float]:
        out = {}
        for n in self.counts():
            errors = [e for r in self._rows_for(n) for e in r.errors]
            if errors:
                out[n] = drmse(np.zeros((len(errors), 2)), np.array(errors))
        return out

    @property
    def mean_drmse(self) -> float:
        values = list(self.drmse_by_count().values())
        return float(np.mean(values)) if values else math.nan

    @property
    def max_mape(self) -> float:
        return max(self.mape_by_count().values())

    def mape_cdf(self) -> list[tuple[float, float]]:
        values = [r.ape for r in self.rows if r.ape is not None]
        return cdf(values) if values else []

    def drmse_cdf(self) -> list[tuple[float, float]]:
        # every row can lack a DRMSE when no estimate fell inside the gate
        values = [r.drmse for r in self.rows if r.drmse is not None]
        return cdf(values) if values else []

    def summary(self) -> dict:
        return {
            "config": asdict(self.config),
            "mape_by_count": {str(k): v for k, v in self.mape_by_count().items()},
            "mape_stderr_by_count": {str(k): v for k, v in self.mape_stderr_by_count().items()},
            "drmse_by_count": {str(k): v for k, v in self.drmse_by_count().items()},
            "mean_drmse": self.mean_drmse,
            "max_mape": self.max_mape,
        }


ROW_HEADER = ["scenario", "system", "distinguisher", "mobility_factor", "n_targets", "iteration",
              "actual", "estimated", "mape", "drmse"]


def _fmt(value) -> str:
    return "" if value is None else f"{value:.6f}"


def write_rows_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROW_HEADER)
        for r in report.rows:
            writer.writerow([r.scenario, r.system, r.distinguisher, f"{r.mobility_factor:.4f}",
                             r.n_targets, r.iteration, r.actual, r.estimated, _fmt(r.ape),
                             _fmt(r.drmse)])


def write_count_summary_csv(report: MetricsReport, path) -> None:
    mapes = report.mape_by_count()
    errs = report.mape_stderr_by_count()
    drm = report.drmse_by_count()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n_targets", "mape", "mape_stderr", "drmse"])
        for n in report.counts():
            writer.writerow([n, _fmt(mapes[n]), _fmt(errs[n]), _fmt(drm.get(n))])


def write_cdf_csv(steps, path, label: str = "value") -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([label, "fraction"])
        for value, fraction in steps:
            writer.writerow([f"{value:.6f}", f"{fraction:.6f}"])


def json_safe(value):
    """Recursively convert numpy scalars to Python and non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_summary_json(summary: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(json_safe(summary), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


# ---------------------------------------------------------------- world generation


def _free(env: Environment, xy, others, spacing: float) -> bool:
    x, y = xy
    if not (WALL_MARGIN <= x <= env.width_m - WALL_MARGIN
            and WALL_MARGIN <= y <= env.length_m - WALL_MARGIN):
        return False
    reach = BODY_WIDTH / 2
    for box in env.furniture:
        if box.lo[0] - reach < x < box.hi[0] + reach and box.lo[1] - reach < y < box.hi[1] + reach:
            return False
    return all(math.hypot(x - ox, y - oy) >= spacing for ox, oy in others)


def place_targets(env: Environment, count: int, rng: np.random.Generator, spacing: float = 0.5,
                  attempts: int = 20_000) -> np.ndarray:
    """Uniform positions clear of walls and furniture with a minimum separation."""
    placed: list = []
    for _ in range(attempts):
        if len(placed) == count:
            break
        xy = (float(rng.uniform(0, env.width_m)), float(rng.uniform(0, env.length_m)))
        if _free(env, xy, placed, spacing):
            placed.append(xy)
    if len(placed) < count:
        raise ValueError(f"could not place {count} targets {spacing} m apart")
    return np.array(placed).reshape(-1, 2)


def step_targets(env: Environment, positions: np.ndarray, headings: list[int],
                 rng: np.random.Generator, p_move: float, step_m: float = 0.3,
                 spacing: float = 0.5) -> tuple[np.ndarray, list[int]]:
    """Each target moves ``step_m`` in one of eight directions with probability ``p_move``.

    Directions blocked by walls, furniture or another target are redrawn from the
    free ones; a target with none free stays put. Headings follow the motion.
    """
    positions = positions.copy()
    headings = list(headings)
    unit = DIRECTIONS / np.linalg.norm(DIRECTIONS, axis=1, keepdims=True)
    for k in range(len(positions)):
        if rng.random() >= p_move:
            continue
        others = [tuple(p) for m, p in enumerate(positions) if m != k]
        options = [d for d in range(len(DIRECTIONS))
                   if _free(env, positions[k] + step_m * unit[d], others, spacing)]
        if not options:
            continue
        d = options[int(rng.integers(len(options)))]
        positions[k] = positions[k] + step_m * unit[d]
        headings[k] = int(DIRECTION_HEADINGS[d])
    return positions, headings


def _targets(positions, headings, reflectivity, ids=None) -> list[TargetState]:
    ids = range(len(positions)) if ids is None else ids
    return [TargetState((float(p[0]), float(p[1])), int(h), float(r), int(i))
            for p, h, r, i in zip(positions, headings, reflectivity, ids)]


def scenario_world(cfg: ScenarioConfig, env: Environment, count: int, iteration: int,
                   reflectivity) -> list[list[TargetState]]:
    """Target sets of the ``steps + 1`` snapshots of one iteration."""
    rng = np.random.default_rng([cfg.seed, SCENARIO_CODE[cfg.scenario], count, iteration])
    positions = place_targets(env, count, rng, cfg.min_spacing_m)
    headings = [int(h) for h in rng.choice(DIRECTION_HEADINGS, size=count)]
    frames = [_targets(positions, headings, reflectivity)]
    for _ in range(cfg.steps):
        positions, headings = step_targets(env, positions, headings, rng, cfg.move_probability,
                                           cfg.step_m, cfg.min_spacing_m)
        frames.append(_targets(positions, headings, reflectivity))
    return frames


def count_reflectivity(cfg: ScenarioConfig, count: int) -> np.ndarray:
    """Per-target reflection factors, shared by every iteration of one target count."""
    rng = np.random.default_rng([cfg.seed, SCENARIO_CODE[cfg.scenario], count, 1 << 20])
    return np.atleast_1d(sample_reflection_factor(ReflectivityModel(), rng, size=count))


# ---------------------------------------------------------------- systems


def noise_factor(distinguisher: str, depth: int) -> float:
    """Noise std of a distinguisher output relative to the raw snapshot noise."""
    if distinguisher == "bsm":
        return math.sqrt(2.0)
    if distinguisher == "psm":
        return math.sqrt(1.0 + 1.0 / depth)
    return 1.0  # gated excess over the calibrated background


class PixelTracker:
    """Keeps pixels that once showed motion while they still hold target-level energy.

    ``reference`` is the calibrated empty-room pixel vector; a track survives as
    long as the current pixel exceeds it by the pixel's D_thL. A new detection
    next to an existing track replaces it, since that target has moved.
    """

    def __init__(self, pixel_map: PixelMap, reference: np.ndarray, lows: np.ndarray):
        self.pixel_map = pixel_map
        self.reference = reference
        self.lows = lows
        self.tracks: set[int] = set()

    def _adjacent(self, a: int, b: int) -> bool:
        cols = self.pixel_map.cols
        return abs(a // cols - b // cols) <= 1 and abs(a % cols - b % cols) <= 1

    def update(self, marked, current: np.ndarray) -> set[int]:
        residual = current - self.reference
        kept = {p for p in self.tracks if residual[p] >= self.lows[p]}
        for p in marked:
            kept = {q for q in kept if not self._adjacent(p, q)}
        self.tracks = kept | set(int(p) for p in marked)
        return set(self.tracks)


class Pipeline:
    """One system's renderer plus its distinguishing and decision chain."""

    def __init__(self, system: str, env: Environment, fidelity: str = "desk",
                 kappa: float = SIGNIFICANCE):
        self.system = system
        self.kappa = kappa
        if system == "mimo":
            self.front = MimoFrontEnd(MimoSystem(), env, fidelity)
            self.bounds = (env.width_m, env.length_m)
        else:
            self.front = ImagingFrontEnd(env, fidelity=fidelity)
        self.sigma_t = self.front.sigma_t
        self._thresholds: dict = {}
        self.background = self.front.clean([])  # calibrated empty-room scan
        self._reference = None

    def _bistatic_rows(self) -> np.ndarray:
        return np.array([f.tx != f.rx for f in self.front.frames])

    def render(self, targets, rng: np.random.Generator) -> np.ndarray:
        return self.front.observe(targets, rng)

    def thresholds(self, distinguisher: str, depth: int):
        key = (distinguisher, depth)
        if key not in self._thresholds:
            self._thresholds[key] = self.front.thresholds(noise_factor(distinguisher, depth),
                                                          FALSE_ALARM)
        return self._thresholds[key]

    def distinguish(self, distinguisher: str, history: np.ndarray, current: np.ndarray):
        if distinguisher == "bsm":
            return bsm_slots(history[-1], current)
        if distinguisher == "ccm":
            if self.system != "mimo":
                return ccm_slots(history, current, self.sigma_t, self.kappa, self.background)[1]
            window = np.concatenate([history, current[None]])
            weights = motion_weights(window, self.sigma_t, self.kappa).astype(bool)
            # a pulse straddling a slot boundary leaves part of itself in the next
            # slot; keeping both sides preserves the energy split used for timing
            weights[:, 1:] |= weights[:, :-1].copy()
            weights[:, :-1] |= weights[:, 1:].copy()
            # bistatic frames are read only inside windows set by a gated
            # monostatic detection, so they pass the plain background excess
            weights[self._bistatic_rows()] = True
            return weights * (current - self.background)
        if distinguisher == "psm":
            return psm(history, current)
        return np.array([pccm(history[:, f], current[f], self.sigma_t, self.kappa,
                              self.background[f])[2] for f in range(len(current))])

    def estimates(self, distinguisher: str, history: np.ndarray, current: np.ndarray) -> list:
        z = self.distinguish(distinguisher, history, current)
        limits = self.thresholds(distinguisher, len(history))
        if self.system == "mimo":
            return run_scan_cycle(self.front.system, z, limits, self.bounds).estimates
        return run_grp_scan(self.front.pixel_map, self.front.groups, z, limits).estimates

    # imaging tracking -------------------------------------------------

    def combined(self, observation: np.ndarray) -> np.ndarray:
        out = np.zeros(self.front.receiver.pixel_count)
        for frame, group in zip(observation, self.front.groups):
            out[group] = frame[group]
        return out

    def tracker(self, distinguisher: str, depth: int) -> PixelTracker:
        if self._reference is None:
            self._reference = self.combined(self.background)
        lows, _ = self.thresholds(distinguisher, depth)
        return PixelTracker(self.front.pixel_map, self._reference, lows)

    def marked_pixels(self, distinguisher: str, history: np.ndarray, current: np.ndarray) -> list:
        z = self.distinguish(distinguisher, history, current)
        lows, highs = self.thresholds(distinguisher, len(history))
        return sorted(soimr_decide(self.combined(z), lows, highs, self.front.pixel_map.rows,
                                   self.front.pixel_map.cols))

    def tracked_estimates(self, distinguisher: str, observations: np.ndarray, min_depth: int):
        """Run the tracker over a snapshot sequence and return the final tracks as estimates."""
        depth = len(observations) - 1
        tracker = self.tracker(distinguisher, depth)
        for k in range(min_depth, len(observations)):
            marked = self.marked_pixels(distinguisher, observations[:k], observations[k])
            tracker.update(marked, self.combined(observations[k]))
        return [pixel_localize(p, self.front.pixel_map) for p in sorted(tracker.tracks)]

    def decide(self, distinguisher: str, observations: np.ndarray, tracking: bool) -> list:
        if self.system == "img" and tracking:
            min_depth = 2 if distinguisher == "pccm" else 1
            return self.tracked_estimates(distinguisher, observations, min_depth)
        return self.estimates(distinguisher, observations[:-1], observations[-1])


def _score(cfg: ScenarioConfig, distinguisher: str, count: int, iteration: int, truth,
           estimates) -> IterationRow:
    truth_xy = np.array([t.position for t in truth]).reshape(-1, 2)
    est_xy = np.array([(e.x, e.y) for e in estimates]).reshape(-1, 2)
    pairs = greedy_match(truth_xy, est_xy, cfg.match_gate_m)
    errors = [tuple(est_xy[e] - truth_xy[t]) for t, e in pairs]
    actual = len(truth)
    ape = abs(actual - len(estimates)) / actual * 100.0 if actual else None
    score = drmse(np.zeros((len(errors), 2)), np.array(errors)) if errors else None
    return IterationRow(cfg.scenario, cfg.system, distinguisher, cfg.move_probability, count,
                        iteration, actual, len(estimates), ape, score, errors)


def _run_counts(cfg: ScenarioConfig, distinguishers: tuple, counts: list[int]) -> dict:
    env = build_environment(EnvironmentConfig(cfg.room))
    pipeline = Pipeline(cfg.system, env, cfg.fidelity, cfg.kappa)
    rows = {d: [] for d in distinguishers}
    for count in counts:
        reflectivity = count_reflectivity(cfg, count)
        for j in range(cfg.iterations):
            world = scenario_world(cfg, env, count, j, reflectivity)
            noise_rng = np.random.default_rng(
                [cfg.seed, SCENARIO_CODE[cfg.scenario], count, j, SYSTEM_CODE[cfg.system]])
            observations = np.array([pipeline.render(targets, noise_rng) for targets in world])
            for d in distinguishers:
                estimates = pipeline.decide(d, observations, cfg.tracking)
                rows[d].append(_score(cfg, d, count, j, world[-1], estimates))
    return rows


def run_scenario_paired(cfg: ScenarioConfig, distinguishers=None,
                        workers: int = 1) -> dict[str, MetricsReport]:
    """Run several distinguishers on the same rendered snapshots (a paired comparison).

    Target counts are split across ``workers`` processes; results are merged in
    count order so the output does not depend on the worker count.
    """
    names = distinguishers or (cfg.distinguisher,)
    names = tuple(dict.fromkeys(canonical_distinguisher(cfg.system, d) for d in names))
    counts = list(range(1, cfg.max_targets + 1))
    if workers <= 1 or len(counts) == 1:
        parts = [_run_counts(cfg, names, counts)]
    else:
        chunks = [counts[w::workers] for w in range(workers) if counts[w::workers]]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_run_counts, [cfg] * len(chunks), [names] * len(chunks), chunks))
    reports = {}
    for d in names:
        rows = [row for part in parts for row in part[d]]
        rows.sort(key=lambda r: (r.n_targets, r.iteration))
        reports[d] = MetricsReport(replace(cfg, distinguisher=d), rows)
    return reports


def run_scenario(cfg: ScenarioConfig, workers: int = 1) -> MetricsReport:
    name = canonical_distinguisher(cfg.system, cfg.distinguisher)
    return run_scenario_paired(cfg, (name,), workers)[name]


# ---------------------------------------------------------------- case study


@dataclass
class CaseStudyReport:
    config: ScenarioConfig
    rows: list  # IterationRow per evaluation instant (iteration = evaluation index)
    window_mape: list  # MAPE per buffering window

    @property
    def median_mape(self) -> float:
        return float(np.median(self.window_mape)) if self.window_mape else math.nan

    @property
    def mean_mape(self) -> float:
        return float(np.mean(self.window_mape)) if self.window_mape else math.nan

    def mape_cdf(self) -> list[tuple[float, float]]:
        return cdf(self.window_mape) if self.window_mape else []

    def summary(self) -> dict:
        return {"config": asdict(self.config), "median_mape": self.median_mape,
                "mean_mape": self.mean_mape, "window_mape": self.window_mape,
                "mape_p90": float(np.percentile(self.window_mape, 90)) if self.window_mape else None}


def case_study_traces(cfg: ScenarioConfig, env: Environment) -> list:
    """Presence intervals and trajectories of everyone entering during the window."""
    rng = np.random.default_rng([cfg.seed, SCENARIO_CODE["case_study"],
                                 0 if cfg.behaviour == "pedestrian" else 1,
                                 0 if cfg.mobility_model == "pathway" else 1])
    proc = PopulationProcess(cfg.arrival_rate, cfg.departure_rate, cfg.duration_s)
    events = population_events(proc, rng)
    grid = build_grid(env)
    nomadic = cfg.behaviour == "nomadic"
    model = (nomadic_model(grid, interest_cells(grid, env, 9, rng)) if nomadic
             else uniform_model(grid, 1 - cfg.p_move))
    paths = default_pathways()
    pause_points = default_path_interest()
    model_rng = ReflectivityModel()
    traces = []
    for person, (arrival, departure) in enumerate(events):
        stay = min(departure, cfg.duration_s) - arrival
        speed = float(rng.uniform(0.5, 2.0)) if nomadic else PEDESTRIAN_SPEED
        if cfg.mobility_model == "random_walk":
            trace = simulate_walk(grid, model, speed, stay, rng, behaviour=cfg.behaviour,
                                  target_id=person, t0=arrival)
        else:
            k = int(rng.integers(len(paths)))
            pauses = ({i: float(rng.uniform(*NOMADIC_PAUSE_RANGE_S)) for i in pause_points[k]}
                      if nomadic else None)
            trace = simulate_pathway(paths[k], speed, stay, rng, env, pauses, cfg.step_m,
                                     target_id=person, t0=arrival, behaviour=cfg.behaviour)
        rho = float(sample_reflection_factor(model_rng, rng))
        traces.append((arrival, departure, trace, rho))
    return traces


def _present(traces, t: float) -> list[TargetState]:
    out = []
    for arrival, departure, trace, rho in traces:
        if arrival <= t < departure:
            pos, heading = trace.position_at(t)
            heading = int(round(heading / 45.0)) % 8 * 45
            out.append(TargetState((float(pos[0]), float(pos[1])), heading, rho, trace.target_id))
    return out


def run_case_study(cfg: ScenarioConfig) -> CaseStudyReport:
    """One simulated window of arrivals, departures and motion, evaluated at regular instants.

    Each evaluation uses the ``steps + 1`` snapshots at the snapshot rate ending at
    that instant. Evaluations are grouped into buffering windows of
    ``buffer_snapshots`` snapshots and the MAPE of each window is reported;
    instants with nobody present are not scored.
    """
    cfg = replace(cfg, scenario="case_study")
    env = build_environment(EnvironmentConfig(cfg.room))
    traces = case_study_traces(cfg, env)
    pipeline = Pipeline(cfg.system, env, cfg.fidelity, cfg.kappa)
    distinguisher = canonical_distinguisher(cfg.system, cfg.distinguisher)
    noise_rng = np.random.default_rng([cfg.seed, SCENARIO_CODE["case_study"],
                                       SYSTEM_CODE[cfg.system]])
    period = 1.0 / cfg.snapshot_rate
    window_s = cfg.buffer_snapshots * period
    tracker = (pipeline.tracker(distinguisher, cfg.steps)
               if cfg.system == "img" and cfg.tracking else None)
    rows = []
    windows: dict[int, list] = {}
    evaluations = int(math.floor(cfg.duration_s / cfg.evaluation_interval_s + 1e-9))
    for e in range(evaluations):
        t_eval = (e + 1) * cfg.evaluation_interval_s
        times = [t_eval - (cfg.steps - k) * period for k in range(cfg.steps + 1)]
        worlds = [_present(traces, max(t, 0.0)) for t in times]
        observations = np.array([pipeline.render(w, noise_rng) for w in worlds])
        if tracker is not None:
            marked = pipeline.marked_pixels(distinguisher, observations[:-1], observations[-1])
            tracks = tracker.update(marked, pipeline.combined(observations[-1]))
            estimates = [pixel_localize(p, pipeline.front.pixel_map) for p in sorted(tracks)]
        else:
            estimates = pipeline.estimates(distinguisher, observations[:-1], observations[-1])
        row = _score(cfg, distinguisher, len(worlds[-1]), e, worlds[-1], estimates)
        rows.append(row)
        if row.ape is not None:
            windows.setdefault(int((t_eval - 1e-9) // window_s), []).append(row.ape)
    window_mape = [float(np.mean(v)) for _, v in sorted(windows.items())]
    return CaseStudyReport(cfg, rows, window_mape)
