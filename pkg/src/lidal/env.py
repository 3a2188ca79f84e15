"""Room, furniture, human-body targets and the clothing reflectivity model."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize, stats

BODY_DEPTH = 0.15
BODY_WIDTH = 0.48
BODY_HEIGHT = 1.70
D_A_MIN = 0.29  # minimum cross-section used by the closed-form link budgets
HEADINGS_DEG = tuple(range(0, 360, 45))

WOOD_REFLECTIVITY = 0.55
DESK_DIMS = (1.54, 0.76, 0.75)
BOOKSHELF_DIMS = (3.0, 0.8, 2.0)

# Lamp background current measured on a 0.85 cm^2 detector, rescaled to a 20 mm^2 one.
LAMP_CURRENT_REFERENCE = 8.8e-6
LAMP_REFERENCE_AREA = 85e-6
DETECTOR_AREA = 20e-6

FIDELITY_SIZES = {"desk": (0.20, 0.40), "full": (0.05, 0.20)}

# (colour, survey weight, reflection factor)
COLOUR_TABLE = (
    ("black", 0.07, 0.00),
    ("yellow", 0.03, 0.50),
    ("white", 0.04, 1.00),
    ("red", 0.08, 0.90),
    ("purple", 0.14, 0.78),
    ("orange", 0.05, 0.40),
    ("green", 0.14, 0.60),
    ("brown", 0.03, 0.45),
    ("blue", 0.42, 0.75),
)


def _check_unit(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}={value} outside [0, 1]")


@dataclass(frozen=True)
class Cuboid:
    """Axis-aligned furniture box given by its minimum corner and extents."""

    position: tuple[float, float, float]
    dims: tuple[float, float, float]
    reflectivity: float = WOOD_REFLECTIVITY
    lambertian_order: float = 1.0
    name: str = ""

    def __post_init__(self):
        _check_unit("furniture reflectivity", self.reflectivity)
        if min(self.dims) < 0:
            raise ValueError("negative cuboid dimension")

    @property
    def lo(self) -> np.ndarray:
        return np.asarray(self.position, float)

    @property
    def hi(self) -> np.ndarray:
        return self.lo + np.asarray(self.dims, float)


@dataclass(frozen=True)
class LampSource:
    position: tuple[float, float, float]
    background_current_amperes: float = LAMP_CURRENT_REFERENCE


@dataclass(frozen=True)
class Environment:
    width_m: float = 4.0
    length_m: float = 8.0
    height_m: float = 3.0
    wall_reflectivity: float = 0.8
    ceiling_reflectivity: float = 0.8
    floor_reflectivity: float = 0.3
    furniture: tuple[Cuboid, ...] = ()
    lamps: tuple[LampSource, ...] = ()
    name: str = "custom"

    def __post_init__(self):
        if min(self.width_m, self.length_m, self.height_m) <= 0:
            raise ValueError("room dimensions must be positive")
        for label in ("wall_reflectivity", "ceiling_reflectivity", "floor_reflectivity"):
            _check_unit(label, getattr(self, label))
        room = np.array([self.width_m, self.length_m, self.height_m])
        for box in self.furniture:
            if np.any(box.lo < -1e-9) or np.any(box.hi > room + 1e-9):
                raise ValueError(f"furniture {box.name or box.position} outside the room")

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.width_m, self.length_m, self.height_m])

    def box_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Lower/upper corners of all furniture boxes as (K, 3) arrays."""
        if not self.furniture:
            return np.zeros((0, 3)), np.zeros((0, 3))
        return (np.array([b.lo for b in self.furniture]), np.array([b.hi for b in self.furniture]))


@dataclass(frozen=True)
class EnvironmentConfig:
    preset: str = "A"
    width_m: float | None = None
    length_m: float | None = None
    height_m: float | None = None
    wall_reflectivity: float | None = None
    ceiling_reflectivity: float | None = None
    floor_reflectivity: float | None = None
    furniture: tuple[Cuboid, ...] | None = None


def _room_b_furniture() -> tuple[Cuboid, ...]:
    w, d, h = DESK_DIMS
    boxes = []
    # two groups of two facing desks
    for gx, gy, tag in ((0.5, 1.2, "group1"), (1.96, 4.3, "group2")):
        boxes.append(Cuboid((gx, gy, 0.0), (w, d, h), name=f"desk-{tag}-a"))
        boxes.append(Cuboid((gx, gy + d, 0.0), (w, d, h), name=f"desk-{tag}-b"))
    bw, bd, bh = BOOKSHELF_DIMS
    boxes.append(Cuboid((0.5, 8.0 - bd, 0.0), (bw, bd, bh), name="bookshelf"))
    return tuple(boxes)


def _room_b_lamps(furniture: tuple[Cuboid, ...]) -> tuple[LampSource, ...]:
    lamps = []
    for box in furniture:
        if box.name.startswith("desk"):
            cx, cy, _ = box.lo + box.hi
            lamps.append(LampSource((cx / 2, cy / 2, box.hi[2] + 0.4)))
    return tuple(lamps)


def build_environment(config: EnvironmentConfig | None = None) -> Environment:
    """Build Room A (empty office) or Room B (desks and bookshelf), then apply overrides."""
    config = config or EnvironmentConfig()
    preset = config.preset.upper()
    if preset not in ("A", "B"):
        raise ValueError(f"unknown room preset {config.preset!r}")
    furniture = _room_b_furniture() if preset == "B" else ()
    if config.furniture is not None:
        furniture = tuple(config.furniture)
    lamps = _room_b_lamps(furniture) if preset == "B" else ()

    def pick(value, default):
        return default if value is None else value

    return Environment(
        width_m=pick(config.width_m, 4.0),
        length_m=pick(config.length_m, 8.0),
        height_m=pick(config.height_m, 3.0),
        wall_reflectivity=pick(config.wall_reflectivity, 0.8),
        ceiling_reflectivity=pick(config.ceiling_reflectivity, 0.8),
        floor_reflectivity=pick(config.floor_reflectivity, 0.3),
        furniture=furniture,
        lamps=lamps,
        name=f"room-{preset}",
    )


def lamp_background_current(detector_area_m2: float = DETECTOR_AREA) -> float:
    """Lamp-induced background current scaled to the detector area (no optical filter)."""
    return LAMP_CURRENT_REFERENCE * detector_area_m2 / LAMP_REFERENCE_AREA


# ---------------------------------------------------------------- targets


@dataclass(frozen=True)
class TargetState:
    position: tuple[float, float]
    heading_deg: int = 0
    reflection_factor: float = 0.669
    id: int = 0
    height_m: float = BODY_HEIGHT

    def __post_init__(self):
        _check_unit("reflection factor", self.reflection_factor)
        if self.heading_deg % 45 != 0 or not 0 <= self.heading_deg < 360:
            raise ValueError(f"heading {self.heading_deg} is not a multiple of 45 in [0, 360)")

    @property
    def facing(self) -> np.ndarray:
        a = math.radians(self.heading_deg)
        return np.array([math.cos(a), math.sin(a), 0.0])

    @property
    def lateral(self) -> np.ndarray:
        a = math.radians(self.heading_deg)
        return np.array([-math.sin(a), math.cos(a), 0.0])

    @property
    def center(self) -> np.ndarray:
        return np.array([self.position[0], self.position[1], self.height_m / 2])

    def faces(self) -> list[tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]]:
        """Visible body faces as (corner, edge_u, edge_v, normal); the sole is omitted."""
        f, p, up = self.facing, self.lateral, np.array([0.0, 0.0, 1.0])
        base = np.array([self.position[0], self.position[1], 0.0])
        hd, hw, hh = BODY_DEPTH / 2, BODY_WIDTH / 2, self.height_m
        faces = []
        for sign in (1.0, -1.0):
            # front/back: width x height
            corner = base + sign * hd * f - hw * p
            faces.append((corner, BODY_WIDTH * p, hh * up, sign * f))
            # left/right sides: depth x height
            corner = base + sign * hw * p - hd * f
            faces.append((corner, BODY_DEPTH * f, hh * up, sign * p))
        top = base + hh * up - hd * f - hw * p
        faces.append((top, BODY_DEPTH * f, BODY_WIDTH * p, up))
        return faces

    def inside_room(self, env: Environment) -> bool:
        corners = self.footprint_corners()
        return bool(
            np.all(corners[:, 0] >= -1e-9) and np.all(corners[:, 0] <= env.width_m + 1e-9)
            and np.all(corners[:, 1] >= -1e-9) and np.all(corners[:, 1] <= env.length_m + 1e-9)
        )

    def footprint_corners(self) -> np.ndarray:
        c = np.array(self.position, float)
        f, p = self.facing[:2], self.lateral[:2]
        hd, hw = BODY_DEPTH / 2, BODY_WIDTH / 2
        return np.array([c + a * hd * f + b * hw * p for a in (-1, 1) for b in (-1, 1)])


def target_cross_section(target: TargetState, observer_pos, minimum: float | None = None) -> float:
    """Projected body-box area seen from ``observer_pos``.

    ``minimum`` optionally clamps the result from below (the closed-form link
    budgets use ``D_A_MIN``).
    """
    observer = np.asarray(observer_pos, float)
    if observer[2] < 0:
        raise ValueError("observer below the floor")
    view = observer - target.center
    if np.allclose(view[:2], 0.0) and view[2] > 0:
        view = np.array([0.0, 0.0, 1.0])
    view = view / np.linalg.norm(view)
    area = 0.0
    for _, u, v, normal in target.faces():
        area += np.linalg.norm(np.cross(u, v)) * max(0.0, float(normal @ view))
    if minimum is not None:
        area = max(area, minimum)
    return area


# ---------------------------------------------------------------- surface elements


@dataclass(frozen=True)
class SurfaceElement:
    center: tuple[float, float, float]
    normal: tuple[float, float, float]
    area: float
    reflectivity: float
    lambertian_order: float = 1.0


@dataclass
class ElementSet:
    """Structure-of-arrays container of surface elements.

    ``owner`` is -1 for room surfaces, ``k`` for furniture box ``k`` and
    ``-(2 + id)`` for the body of target ``id``.
    """

    centers: np.ndarray
    normals: np.ndarray
    areas: np.ndarray
    reflectivity: np.ndarray
    order: np.ndarray
    owner: np.ndarray

    def __len__(self) -> int:
        return len(self.areas)

    def __getitem__(self, i: int) -> SurfaceElement:
        return SurfaceElement(tuple(self.centers[i]), tuple(self.normals[i]), float(self.areas[i]),
                              float(self.reflectivity[i]), float(self.order[i]))

    @staticmethod
    def empty() -> "ElementSet":
        z = np.zeros((0, 3))
        e = np.zeros(0)
        return ElementSet(z, z.copy(), e, e.copy(), e.copy(), np.zeros(0, int))

    @staticmethod
    def concat(sets: list["ElementSet"]) -> "ElementSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return ElementSet.empty()
        return ElementSet(*(np.concatenate([getattr(s, f) for s in sets]) for f in
                            ("centers", "normals", "areas", "reflectivity", "order", "owner")))

    def select(self, mask) -> "ElementSet":
        return ElementSet(self.centers[mask], self.normals[mask], self.areas[mask],
                          self.reflectivity[mask], self.order[mask], self.owner[mask])


def tile_face(corner, edge_u, edge_v, normal, size: float, reflectivity: float,
              order: float = 1.0, owner: int = -1) -> ElementSet:
    """Split a rectangle into round(L/size) tiles per edge; degenerate faces give none."""
    corner, edge_u, edge_v = (np.asarray(a, float) for a in (corner, edge_u, edge_v))
    lu, lv = np.linalg.norm(edge_u), np.linalg.norm(edge_v)
    if lu <= 0 or lv <= 0:
        return ElementSet.empty()
    nu, nv = max(1, int(round(lu / size))), max(1, int(round(lv / size)))
    fu = (np.arange(nu) + 0.5) / nu
    fv = (np.arange(nv) + 0.5) / nv
    grid_u, grid_v = np.meshgrid(fu, fv, indexing="ij")
    centers = corner + grid_u.reshape(-1, 1) * edge_u + grid_v.reshape(-1, 1) * edge_v
    count = nu * nv
    n = np.asarray(normal, float)
    n = n / np.linalg.norm(n)
    return ElementSet(
        centers,
        np.tile(n, (count, 1)),
        np.full(count, lu * lv / count),
        np.full(count, reflectivity),
        np.full(count, order),
        np.full(count, owner, dtype=int),
    )


def room_faces(env: Environment):
    """Room boundary faces as (corner, u, v, inward normal, reflectivity)."""
    w, l, h = env.width_m, env.length_m, env.height_m
    x, y, z = np.eye(3)
    o = np.zeros(3)
    return [
        (o, w * x, l * y, z, env.floor_reflectivity),
        (h * z, w * x, l * y, -z, env.ceiling_reflectivity),
        (o, l * y, h * z, x, env.wall_reflectivity),
        (w * x, l * y, h * z, -x, env.wall_reflectivity),
        (o, w * x, h * z, y, env.wall_reflectivity),
        (l * y, w * x, h * z, -y, env.wall_reflectivity),
    ]


def box_faces(box: Cuboid):
    """Five exposed faces of a floor-standing cuboid (bottom omitted)."""
    lo, hi = box.lo, box.hi
    dx, dy, dz = hi - lo
    x, y, z = np.eye(3)
    return [
        (lo + dz * z, dx * x, dy * y, z),
        (lo, dy * y, dz * z, -x),
        (lo + dx * x, dy * y, dz * z, x),
        (lo, dx * x, dz * z, -y),
        (lo + dy * y, dx * x, dz * z, y),
    ]


def element_size(reflection_order: int, fidelity: str = "desk",
                 sizes: tuple[float, float] | None = None) -> float:
    if reflection_order not in (1, 2):
        raise ValueError("reflection order must be 1 or 2")
    first, second = sizes if sizes is not None else FIDELITY_SIZES[fidelity]
    return max(first if reflection_order == 1 else second, 1e-3)


def discretize_surfaces(env: Environment, reflection_order: int, targets=(),
                        fidelity: str = "desk", sizes: tuple[float, float] | None = None,
                        include_room: bool = True) -> ElementSet:
    """Tile room, furniture and target faces with the element size of the given order."""
    size = element_size(reflection_order, fidelity, sizes)
    parts = []
    if include_room:
        for corner, u, v, n, rho in room_faces(env):
            parts.append(tile_face(corner, u, v, n, size, rho))
    for k, box in enumerate(env.furniture):
        for corner, u, v, n in box_faces(box):
            parts.append(tile_face(corner, u, v, n, size, box.reflectivity, box.lambertian_order, k))
    for target in targets:
        for corner, u, v, n in target.faces():
            parts.append(tile_face(corner, u, v, n, size, target.reflection_factor, 1.0,
                                   -(2 + target.id)))
    return ElementSet.concat(parts)


# ---------------------------------------------------------------- reflectivity model


def colour_moments(table=COLOUR_TABLE) -> tuple[float, float]:
    weights = np.array([w for _, w, _ in table])
    rho = np.array([r for _, _, r in table])
    weights = weights / weights.sum()
    mean = float(weights @ rho)
    return mean, float(math.sqrt(weights @ rho**2 - mean**2))


@dataclass(frozen=True)
class ReflectivityModel:
    """Gaussian model of clothing reflection factor truncated to [0, 1].

    ``mu_rho``/``sigma_rho`` are the moments of the *sampled* (truncated)
    distribution; the parent Gaussian is solved for internally.
    """

    mu_rho: float = field(default_factory=lambda: colour_moments()[0])
    sigma_rho: float = field(default_factory=lambda: colour_moments()[1])
    mu_Ae: float = D_A_MIN
    sigma_Ae: float = 0.0
    colour_table: tuple = COLOUR_TABLE

    def __post_init__(self):
        if not 0.0 < self.mu_rho < 1.0:
            raise ValueError("mu_rho must lie in (0, 1)")
        if self.sigma_rho < 0:
            raise ValueError("sigma_rho must be non-negative")
        total = sum(w for _, w, _ in self.colour_table)
        if abs(total - 1.0) > 0.01:
            raise ValueError(f"colour weights sum to {total}, expected 1")


@lru_cache(maxsize=64)
def _parent_gaussian(mu: float, sigma: float) -> tuple[float, float]:
    """Parent (loc, scale) whose [0,1]-truncation has the requested mean and std."""

    def moments(params):
        loc, log_scale = params
        scale = math.exp(log_scale)
        a, b = (0 - loc) / scale, (1 - loc) / scale
        m, v = stats.truncnorm.stats(a, b, loc=loc, scale=scale, moments="mv")
        return [float(m) - mu, math.sqrt(float(v)) - sigma]

    sol = optimize.root(moments, x0=[mu, math.log(sigma)], method="hybr")
    loc, log_scale = sol.x
    if not sol.success or max(abs(r) for r in moments(sol.x)) > 1e-6:
        raise ValueError(f"no truncated Gaussian on [0,1] has mean {mu} and std {sigma}")
    return float(loc), float(math.exp(log_scale))


def sample_reflection_factor(model: ReflectivityModel, rng: np.random.Generator, size=None):
    """Draw clothing reflection factors in [0, 1]."""
    if model.sigma_rho == 0:
        return model.mu_rho if size is None else np.full(size, model.mu_rho)
    loc, scale = _parent_gaussian(round(model.mu_rho, 12), round(model.sigma_rho, 12))
    a, b = (0 - loc) / scale, (1 - loc) / scale
    draws = stats.truncnorm.rvs(a, b, loc=loc, scale=scale, size=size, random_state=rng)
    return float(draws) if size is None else np.clip(draws, 0.0, 1.0)
