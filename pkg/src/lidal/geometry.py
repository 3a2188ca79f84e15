"""Oriented boxes and vectorized segment occlusion tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import BODY_DEPTH, BODY_WIDTH, Environment, TargetState

SURFACE_OFFSET = 1e-4  # lift ray endpoints off their own surface


@dataclass(frozen=True)
class Boxes:
    """A set of oriented boxes: centre, local axes (rows) and half extents."""

    centers: np.ndarray  # (K, 3)
    axes: np.ndarray  # (K, 3, 3)
    half: np.ndarray  # (K, 3)

    def __len__(self) -> int:
        return len(self.centers)

    @staticmethod
    def empty() -> "Boxes":
        return Boxes(np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)))

    @staticmethod
    def concat(parts: list["Boxes"]) -> "Boxes":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Boxes.empty()
        return Boxes(np.concatenate([p.centers for p in parts]),
                     np.concatenate([p.axes for p in parts]),
                     np.concatenate([p.half for p in parts]))


def furniture_boxes(env: Environment) -> Boxes:
    if not env.furniture:
        return Boxes.empty()
    lo, hi = env.box_bounds()
    k = len(lo)
    return Boxes((lo + hi) / 2, np.tile(np.eye(3), (k, 1, 1)), (hi - lo) / 2)


def target_boxes(targets) -> Boxes:
    targets = list(targets)
    if not targets:
        return Boxes.empty()
    centers = np.array([t.center for t in targets])
    axes = np.array([[t.facing, t.lateral, [0.0, 0.0, 1.0]] for t in targets])
    half = np.array([[BODY_DEPTH / 2, BODY_WIDTH / 2, t.height_m / 2] for t in targets])
    return Boxes(centers, axes, half)


def segments_blocked(starts: np.ndarray, ends: np.ndarray, boxes: Boxes,
                     chunk: int = 200_000) -> np.ndarray:
    """True where the open segment start->end passes through any box.

    ``starts`` may be a single point (3,) broadcast against ``ends`` (M, 3).
    """
    ends = np.atleast_2d(ends)
    m = len(ends)
    blocked = np.zeros(m, dtype=bool)
    if len(boxes) == 0 or m == 0:
        return blocked
    starts = np.broadcast_to(starts, ends.shape)
    per = max(1, chunk // len(boxes))
    for a in range(0, m, per):
        s = starts[a:a + per]
        e = ends[a:a + per]
        # into each box's local frame: (M, K, 3)
        rel = s[:, None, :] - boxes.centers[None]
        o = np.einsum("kij,mkj->mki", boxes.axes, rel)
        d = np.einsum("kij,mj->mki", boxes.axes, e - s)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / d
            t1 = (-boxes.half[None] - o) * inv
            t2 = (boxes.half[None] - o) * inv
        tmin = np.fmin(t1, t2)
        tmax = np.fmax(t1, t2)
        # parallel rays: inside the slab -> unconstrained, outside -> miss
        parallel = d == 0
        inside = np.abs(o) <= boxes.half[None]
        tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
        enter = tmin.max(axis=2)
        leave = tmax.min(axis=2)
        hit = (enter <= leave) & (leave > 1e-9) & (enter < 1 - 1e-9)
        blocked[a:a + per] = hit.any(axis=1)
    return blocked


def point_in_boxes(points: np.ndarray, boxes: Boxes, margin: float = 0.0) -> np.ndarray:
    points = np.atleast_2d(points)
    if len(boxes) == 0:
        return np.zeros(len(points), bool)
    rel = points[:, None, :] - boxes.centers[None]
    local = np.einsum("kij,mkj->mki", boxes.axes, rel)
    return np.all(np.abs(local) <= boxes.half[None] + margin, axis=2).any(axis=1)


def lifted(centers: np.ndarray, normals: np.ndarray) -> np.ndarray:
    return centers + SURFACE_OFFSET * normals


__all__ = ["Boxes", "furniture_boxes", "target_boxes", "segments_blocked", "point_in_boxes",
           "lifted", "TargetState"]
