"""Target motion: Markov grid walks, pathways, arrivals and mobility analytics."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .env import Environment

NEIGHBOURS = 8
DIRECTIONS = np.array([(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)])
DIRECTION_HEADINGS = np.arange(0, 360, 45)
NOMADIC_SPEED_RANGE = (0.5, 2.0)
INTEREST_LOCATIONS = 9


@dataclass(frozen=True)
class MobilityGrid:
    """Square cells over the floor; ``blocked`` is indexed [ix, iy]."""

    cell: float
    blocked: np.ndarray
    width_m: float
    length_m: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.blocked.shape

    @property
    def cell_count(self) -> int:
        return self.blocked.size

    def centre(self, ix, iy) -> np.ndarray:
        return np.stack([(np.asarray(ix) + 0.5) * self.cell, (np.asarray(iy) + 0.5) * self.cell], -1)

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        nx, ny = self.shape
        return (min(max(int(x // self.cell), 0), nx - 1), min(max(int(y // self.cell), 0), ny - 1))

    def neighbour_mask(self) -> np.ndarray:
        """(nx, ny, 8) True where a step in that direction lands on a free in-room cell."""
        nx, ny = self.shape
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        mask = np.zeros((nx, ny, NEIGHBOURS), bool)
        for d, (dx, dy) in enumerate(DIRECTIONS):
            tx, ty = ix + dx, iy + dy
            inside = (tx >= 0) & (tx < nx) & (ty >= 0) & (ty < ny)
            free = np.zeros_like(inside)
            free[inside] = ~self.blocked[tx[inside], ty[inside]]
            mask[..., d] = inside & free
        mask[self.blocked] = False
        return mask

    @property
    def allowed_counts(self) -> np.ndarray:
        """N_A per cell counting walls and furniture (zero for blocked cells)."""
        return self.neighbour_mask().sum(axis=2)

    def obstacle_allowed_counts(self) -> np.ndarray:
        """N_A per cell where only furniture removes directions; walls bound the space itself."""
        nx, ny = self.shape
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        counts = np.full((nx, ny), NEIGHBOURS)
        for dx, dy in DIRECTIONS:
            tx, ty = ix + dx, iy + dy
            inside = (tx >= 0) & (tx < nx) & (ty >= 0) & (ty < ny)
            hit = np.zeros_like(inside)
            hit[inside] = self.blocked[tx[inside], ty[inside]]
            counts -= hit
        counts[self.blocked] = 0
        return counts


def build_grid(env: Environment, cell: float = 0.3) -> MobilityGrid:
    """Grid of floor(width/cell) x floor(length/cell) cells; cells overlapping furniture are blocked."""
    if cell <= 0:
        raise ValueError("cell size must be positive")
    nx = int(math.floor(env.width_m / cell + 1e-9))
    ny = int(math.floor(env.length_m / cell + 1e-9))
    blocked = np.zeros((nx, ny), bool)
    x_lo = np.arange(nx) * cell
    y_lo = np.arange(ny) * cell
    for box in env.furniture:
        ox = (x_lo < box.hi[0] - 1e-9) & (x_lo + cell > box.lo[0] + 1e-9)
        oy = (y_lo < box.hi[1] - 1e-9) & (y_lo + cell > box.lo[1] + 1e-9)
        blocked |= ox[:, None] & oy[None, :]
    return MobilityGrid(cell, blocked, env.width_m, env.length_m)


def grid_from_blocked(blocked: np.ndarray, cell: float = 0.3) -> MobilityGrid:
    blocked = np.asarray(blocked, bool)
    return MobilityGrid(cell, blocked, blocked.shape[0] * cell, blocked.shape[1] * cell)


def suf_from_counts(counts, n_d: int = NEIGHBOURS) -> float:
    """Space utilisation factor from allowed-neighbour counts, one per location."""
    counts = np.asarray(counts, float).ravel()
    return float(1 - np.sum(n_d - counts) / (counts.size * n_d))


def suf(grid: MobilityGrid) -> float:
    """Space utilisation factor.

    Blocked cells count as locations with no allowed moves. A free cell whose
    every neighbour is furniture is isolated; it is left out with a warning.
    """
    counts = grid.obstacle_allowed_counts()
    isolated = (~grid.blocked) & (counts == 0)
    if isolated.any():
        warnings.warn(f"{int(isolated.sum())} isolated free cell(s) excluded from SUF",
                      stacklevel=2)
    keep = ~isolated
    total = grid.cell_count
    return float(1 - np.sum(NEIGHBOURS - counts[keep]) / (total * NEIGHBOURS))


@dataclass(frozen=True)
class TransitionModel:
    """Per-cell stay probability and per-direction move probabilities."""

    stay: np.ndarray  # (nx, ny)
    move: np.ndarray  # (nx, ny, 8)
    interest: tuple = ()

    def __post_init__(self):
        total = self.stay + self.move.sum(axis=2)
        if np.any(self.stay < -1e-12) or np.any(self.move < -1e-12):
            raise ValueError("negative transition probability")
        if not np.allclose(total, 1.0, atol=1e-9):
            raise ValueError("transition rows must sum to one")

    def row(self, ix: int, iy: int) -> np.ndarray:
        return np.concatenate([[self.stay[ix, iy]], self.move[ix, iy]])

    def dense(self, grid: MobilityGrid) -> np.ndarray:
        """Full L x L matrix over cells in row-major (ix, iy) order."""
        nx, ny = grid.shape
        size = nx * ny
        matrix = np.zeros((size, size))
        for ix in range(nx):
            for iy in range(ny):
                k = ix * ny + iy
                matrix[k, k] += self.stay[ix, iy]
                for d, (dx, dy) in enumerate(DIRECTIONS):
                    p = self.move[ix, iy, d]
                    if p > 0:
                        matrix[k, (ix + dx) * ny + iy + dy] += p
        return matrix


def _spread(grid: MobilityGrid, stay: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mask = grid.neighbour_mask()
    counts = mask.sum(axis=2)
    stay = np.where(counts == 0, 1.0, stay)
    share = np.where(counts > 0, (1 - stay) / np.maximum(counts, 1), 0.0)
    move = mask * share[..., None]
    return stay, move


def uniform_model(grid: MobilityGrid, p_stay: float = 0.02) -> TransitionModel:
    """Stay with ``p_stay``; otherwise step to an allowed neighbour, equally likely."""
    if not 0 <= p_stay <= 1:
        raise ValueError("p_stay must lie in [0, 1]")
    stay, move = _spread(grid, np.full(grid.shape, float(p_stay)))
    return TransitionModel(stay, move)


def interest_cells(grid: MobilityGrid, env: Environment | None, count: int,
                   rng: np.random.Generator) -> list[tuple[int, int]]:
    """Free cells touching a desk (or any furniture when no desks); random if none."""
    mask = grid.neighbour_mask()
    near = np.zeros(grid.shape, bool)
    if grid.blocked.any():
        nx, ny = grid.shape
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        for dx, dy in DIRECTIONS:
            tx, ty = ix + dx, iy + dy
            inside = (tx >= 0) & (tx < nx) & (ty >= 0) & (ty < ny)
            hit = np.zeros_like(inside)
            hit[inside] = grid.blocked[tx[inside], ty[inside]]
            near |= hit
    candidates = np.argwhere(near & ~grid.blocked & (mask.sum(axis=2) > 0))
    if len(candidates) < count:
        candidates = np.argwhere(~grid.blocked & (mask.sum(axis=2) > 0))
    picks = rng.choice(len(candidates), size=min(count, len(candidates)), replace=False)
    return [tuple(int(v) for v in candidates[i]) for i in sorted(picks)]


def nomadic_model(grid: MobilityGrid, interest: list[tuple[int, int]]) -> TransitionModel:
    """Stay with 1/L_D at interest cells, never elsewhere; moves equally likely."""
    stay = np.zeros(grid.shape)
    for cell in interest:
        stay[cell] = 1.0 / len(interest)
    stay, move = _spread(grid, stay)
    return TransitionModel(stay, move, tuple(interest))


def p_mobility_detection(grid: MobilityGrid, model: TransitionModel, empty: bool = True) -> float:
    """Location-averaged move probability; scaled by SUF for a furnished room."""
    free = ~grid.blocked
    p_move = float(model.move.sum(axis=2)[free].mean()) if free.any() else 0.0
    return p_move if empty else suf(grid) * p_move


def blocked_fraction_sweep(fractions, shape=(13, 26), p_stay: float = 0.02, seed: int = 0,
                           cell: float = 0.3) -> list[dict]:
    """P_MDT in rooms with nested random obstacle sets of growing size."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(shape[0] * shape[1])
    empty = grid_from_blocked(np.zeros(shape, bool), cell)
    p_empty = p_mobility_detection(empty, uniform_model(empty, p_stay))
    rows = []
    for fraction in fractions:
        blocked = np.zeros(shape[0] * shape[1], bool)
        blocked[order[: int(round(fraction * blocked.size))]] = True
        grid = grid_from_blocked(blocked.reshape(shape), cell)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            factor = suf(grid)
        rows.append({"blocked_fraction": float(fraction), "suf": factor,
                     "p_mdt_empty": p_empty, "p_mdt_realistic": factor * p_empty})
    return rows


@dataclass
class MobilityTrace:
    times: np.ndarray
    positions: np.ndarray  # (n, 2) metres
    headings: np.ndarray  # degrees
    behaviour: str = "pedestrian"
    speed: float = 1.0
    target_id: int = 0
    moved: np.ndarray | None = None  # per step: True if the target changed cell
    dwell_time: float = 0.0
    cells: np.ndarray | None = None

    def __post_init__(self):
        if len(self.times) > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trace timestamps must increase")

    def position_at(self, t: float) -> tuple[np.ndarray, float]:
        """Position and heading in effect at time ``t`` (piecewise constant)."""
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        k = min(max(k, 0), len(self.times) - 1)
        return self.positions[k], float(self.headings[k])

    def to_csv(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w", newline="") as fh:
            writer = csv.writer(fh)
            if not append:
                writer.writerow(["t_s", "target_id", "x_m", "y_m"])
            for t, (x, y) in zip(self.times, self.positions):
                writer.writerow([f"{t:.4f}", self.target_id, f"{x:.4f}", f"{y:.4f}"])


def simulate_walk(grid: MobilityGrid, model: TransitionModel, speed: float, duration: float,
                  rng: np.random.Generator, start: tuple[int, int] | None = None,
                  behaviour: str = "pedestrian", target_id: int = 0, t0: float = 0.0,
                  heading: float = 0.0) -> MobilityTrace:
    """Markov walk with one step every cell/speed seconds.

    Nomadic walkers draw a new speed in [0.5, 2] m/s each time they leave an
    interest cell; the time spent staying put is accumulated as dwell time.
    """
    if speed <= 0 or duration < 0:
        raise ValueError("speed must be positive and duration non-negative")
    free = np.argwhere(~grid.blocked)
    if start is None:
        start = tuple(int(v) for v in free[rng.integers(len(free))])
    if grid.blocked[start]:
        raise ValueError("start cell is blocked")
    interest = set(model.interest)
    nomadic = behaviour == "nomadic"
    cumulative = np.cumsum(np.concatenate([model.stay[..., None], model.move], axis=2), axis=2)
    cumulative[..., -1] = 1.0
    ix, iy = start
    t = t0
    current_speed = speed
    times, cells, headings, moved = [t], [(ix, iy)], [heading], [False]
    dwell = 0.0
    end = t0 + duration
    while True:
        step = grid.cell / current_speed
        if t + step > end + 1e-12:
            break
        choice = int(np.searchsorted(cumulative[ix, iy], rng.random(), side="right"))
        choice = min(choice, NEIGHBOURS)
        t += step
        if choice == 0:
            dwell += step
            moved.append(False)
        else:
            if nomadic and (ix, iy) in interest:
                current_speed = float(rng.uniform(*NOMADIC_SPEED_RANGE))
            dx, dy = DIRECTIONS[choice - 1]
            ix, iy = ix + int(dx), iy + int(dy)
            heading = float(DIRECTION_HEADINGS[choice - 1])
            moved.append(True)
        times.append(t)
        cells.append((ix, iy))
        headings.append(heading)
    cells = np.array(cells)
    return MobilityTrace(np.array(times), grid.centre(cells[:, 0], cells[:, 1]), np.array(headings),
                         behaviour, speed, target_id, np.array(moved), dwell, cells)


# ---------------------------------------------------------------- pathways

def default_pathways() -> list[np.ndarray]:
    """Closed aisles around the furniture of the furnished office."""
    loop = np.array([(0.3, 0.6), (3.7, 0.6), (3.7, 6.8), (1.0, 6.8), (1.0, 3.6), (0.3, 3.6),
                     (0.3, 0.6)])
    inner = np.array([(2.6, 1.0), (3.3, 1.0), (3.3, 3.8), (1.4, 3.8), (1.4, 6.3), (3.6, 6.3),
                      (3.6, 3.5), (2.6, 3.5), (2.6, 1.0)])
    return [loop, inner]


def default_path_interest() -> list[list[int]]:
    """Waypoint indices on each default pathway where nomadic walkers pause."""
    return [[1, 4], [2, 5]]


def path_blocked(path: np.ndarray, env: Environment, step: float = 0.02) -> bool:
    path = np.asarray(path, float)
    for a, b in zip(path[:-1], path[1:]):
        count = max(2, int(np.ceil(np.linalg.norm(b - a) / step)) + 1)
        points = a + np.linspace(0, 1, count)[:, None] * (b - a)
        for box in env.furniture:
            inside = ((points[:, 0] > box.lo[0]) & (points[:, 0] < box.hi[0])
                      & (points[:, 1] > box.lo[1]) & (points[:, 1] < box.hi[1]))
            if inside.any():
                return True
    return False


def simulate_pathway(path, speed: float, duration: float, rng: np.random.Generator,
                     env: Environment | None = None, pauses: dict | None = None,
                     sample_step: float = 0.3, cyclic: bool = True, target_id: int = 0,
                     t0: float = 0.0, start_fraction: float | None = None,
                     behaviour: str = "pathway") -> MobilityTrace:
    """Walk a waypoint polyline at constant speed, sampling every ``sample_step`` metres.

    ``pauses`` maps waypoint index to a dwell in seconds. A cyclic path repeats
    from its first waypoint; otherwise the walker stops at the last one.
    """
    path = np.asarray(path, float)
    if len(path) < 2:
        raise ValueError("a path needs at least two waypoints")
    if speed <= 0:
        raise ValueError("speed must be positive")
    if env is not None and path_blocked(path, env):
        raise ValueError("path crosses furniture")
    pauses = pauses or {}
    segments = np.linalg.norm(np.diff(path, axis=0), axis=1)
    if segments.sum() <= 0:
        raise ValueError("degenerate path")
    # event list for one lap: (arc position, waypoint index reached)
    cumulative = np.concatenate([[0.0], np.cumsum(segments)])
    lap_length = cumulative[-1]
    arc = 0.0 if start_fraction is None else start_fraction * lap_length
    if start_fraction is None and cyclic:
        arc = float(rng.uniform(0, lap_length))

    def locate(s: float) -> tuple[np.ndarray, float]:
        k = min(int(np.searchsorted(cumulative, s, side="right")) - 1, len(segments) - 1)
        frac = (s - cumulative[k]) / segments[k] if segments[k] > 0 else 0.0
        direction = path[k + 1] - path[k]
        return path[k] + frac * direction, math.degrees(math.atan2(direction[1], direction[0])) % 360

    times, positions, headings, moved = [], [], [], []
    t = t0
    end = t0 + duration
    dwell = 0.0
    pos, heading = locate(arc)
    times.append(t), positions.append(pos), headings.append(heading), moved.append(False)
    while True:
        step_length = sample_step if cyclic else min(sample_step, lap_length - arc)
        dt = step_length / speed
        if step_length <= 1e-12 or t + dt > end + 1e-12:
            break
        next_arc = arc + step_length
        # pause at any waypoint passed in this step
        crossed = [i for i in range(1, len(path)) if arc < cumulative[i] <= next_arc]
        pause = sum(pauses.get(i, 0.0) for i in crossed)
        if next_arc >= lap_length:
            if cyclic:
                next_arc -= lap_length
                pause += pauses.get(0, 0.0) if 0 not in crossed else 0.0
            else:
                next_arc = lap_length
        if pause > 0:
            stop = min(pause, end - t)
            if stop > 0:
                t += stop
                dwell += stop
                times.append(t), positions.append(pos), headings.append(heading), moved.append(False)
            if t + dt > end + 1e-12:
                break
        arc = next_arc
        t += dt
        pos, heading = locate(min(arc, lap_length - 1e-12))
        times.append(t), positions.append(pos), headings.append(heading)
        moved.append(True)
    return MobilityTrace(np.array(times), np.array(positions), np.array(headings), behaviour, speed,
                         target_id, np.array(moved), dwell)


# ---------------------------------------------------------------- population

@dataclass(frozen=True)
class PopulationProcess:
    """Poisson arrivals served first-come first-served with exponential service (M/M/1)."""

    arrival_rate: float = 12.0  # per hour
    departure_rate: float = 14.0  # per hour
    window_s: float = 3600.0

    def __post_init__(self):
        if self.arrival_rate <= 0 or self.departure_rate <= 0:
            raise ValueError("rates must be positive")
        if self.arrival_rate >= self.departure_rate:
            raise ValueError("unstable population: arrival rate must be below departure rate")

    @property
    def load(self) -> float:
        return self.arrival_rate / self.departure_rate

    @property
    def mean_occupancy(self) -> float:
        return self.load / (1 - self.load)


def max_targets(arrival_rate: float, departure_rate: float) -> float:
    rho = arrival_rate / departure_rate
    if rho >= 1:
        raise ValueError("unstable population: arrival rate must be below departure rate")
    return rho / (1 - rho)


def population_events(proc: PopulationProcess, rng: np.random.Generator) -> list[tuple[float, float]]:
    """(arrival, departure) times in seconds for everyone arriving in the window."""
    rate = proc.arrival_rate / 3600.0
    service = 3600.0 / proc.departure_rate
    events = []
    t = 0.0
    last_departure = 0.0
    while True:
        t += rng.exponential(1 / rate)
        if t >= proc.window_s:
            break
        begin = max(t, last_departure)
        last_departure = begin + rng.exponential(service)
        events.append((t, last_departure))
    return events


def service_times(proc: PopulationProcess, count: int, rng: np.random.Generator) -> np.ndarray:
    return rng.exponential(3600.0 / proc.departure_rate, count)


def time_average_occupancy(events, window_s: float) -> float:
    total = 0.0
    for arrival, departure in events:
        total += max(0.0, min(departure, window_s) - arrival)
    return total / window_s


def mobility_factor(dwell_times, window_s: float) -> float:
    """Share of the observation window spent moving."""
    if window_s <= 0:
        raise ValueError("window must be positive")
    dwell = float(np.sum(dwell_times))
    if dwell > window_s + 1e-9:
        raise ValueError("dwell exceeds the observation window")
    return (window_s - dwell) / window_s
