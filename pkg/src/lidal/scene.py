"""Batched echo rendering shared by the MIMO and imaging systems.

A frame is one transmitter firing while one receiver listens. Static room and
furniture echoes are traced once per frame and cached; target bodies are
re-traced for every snapshot, and they shadow the cached background paths
they sit in front of.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT, Receiver, TransceiverConfig, trace_paths
from .env import ElementSet, Environment, element_size, tile_face
from .frontend import SLOT_WIDTH
from .geometry import Boxes, furniture_boxes, lifted, segments_blocked, target_boxes


@dataclass(frozen=True)
class Frame:
    """One transmitter/receiver activation."""

    tx: int
    rx: int
    config: TransceiverConfig
    receiver: Receiver


@dataclass
class FrameEchoes:
    """Path powers (W), delays (s) and last reflection points for one frame."""

    power: np.ndarray
    delay: np.ndarray
    point: np.ndarray

    @staticmethod
    def empty() -> "FrameEchoes":
        return FrameEchoes(np.zeros(0), np.zeros(0), np.zeros((0, 3)))

    def merged(self, other: "FrameEchoes") -> "FrameEchoes":
        return FrameEchoes(np.concatenate([self.power, other.power]),
                           np.concatenate([self.delay, other.delay]),
                           np.concatenate([self.point, other.point]))


def body_elements(targets, size: float) -> ElementSet:
    parts = []
    for target in targets:
        for corner, u, v, n in target.faces():
            parts.append(tile_face(corner, u, v, n, size, target.reflection_factor, 1.0,
                                   -(2 + target.id)))
    return ElementSet.concat(parts)


def split_into_slots(delays: np.ndarray, amplitudes: np.ndarray, n_slots: int,
                     slot_width: float = SLOT_WIDTH) -> np.ndarray:
    """Slot-mean amplitude of rectangular pulses one slot wide arriving at ``delays``.

    A pulse starting a fraction f into slot j leaves (1 - f) of its amplitude in
    slot j and f in slot j + 1.
    """
    out = np.zeros(n_slots + 1)
    if len(delays):
        position = np.asarray(delays, float) / slot_width
        first = np.floor(position + 1e-12).astype(int)
        frac = np.clip(position - first, 0.0, 1.0)
        keep = (first >= 0) & (first < n_slots)
        np.add.at(out, first[keep], amplitudes[keep] * (1 - frac[keep]))
        np.add.at(out, first[keep] + 1, amplitudes[keep] * frac[keep])
    return out[:n_slots]


@dataclass
class SceneEngine:
    """Renders noiseless echoes of a set of targets for a list of frames."""

    env: Environment
    frames: list
    fidelity: str = "desk"
    background_order: int = 1
    _background: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._furniture = furniture_boxes(self.env)
        self._size = element_size(1, self.fidelity)

    def background(self, index: int) -> FrameEchoes:
        if index not in self._background:
            frame = self.frames[index]
            paths = trace_paths(self.env, frame.config, (), self.background_order, self.fidelity,
                                receiver=frame.receiver)
            self._background[index] = FrameEchoes(paths.gain * frame.config.tx_power, paths.delay,
                                                  paths.arrival_point)
        return self._background[index]

    def shadowed_background(self, index: int, occluders: Boxes) -> FrameEchoes:
        """Cached background with the paths that cross a target body removed."""
        echoes = self.background(index)
        if len(occluders) == 0 or len(echoes.power) == 0:
            return echoes
        frame = self.frames[index]
        reach = np.abs(occluders.half).max(axis=1, keepdims=True)
        lo = occluders.centers - reach
        hi = occluders.centers + reach
        points = echoes.point
        tx = np.asarray(frame.config.tx_position, float)
        rx = frame.receiver.position
        keep = np.ones(len(points), bool)
        lifted_points = points + 1e-4 * np.sign(rx - points)
        tx_lo, tx_hi = np.minimum(tx, points), np.maximum(tx, points)
        rx_lo, rx_hi = np.minimum(rx, points), np.maximum(rx, points)
        # each body is tested only against the paths whose legs pass near it
        for k in range(len(occluders)):
            near = (np.all((tx_lo <= hi[k]) & (tx_hi >= lo[k]), axis=1)
                    | np.all((rx_lo <= hi[k]) & (rx_hi >= lo[k]), axis=1)) & keep
            if not near.any():
                continue
            idx = np.flatnonzero(near)
            box = Boxes(occluders.centers[k:k + 1], occluders.axes[k:k + 1],
                        occluders.half[k:k + 1])
            hit = (segments_blocked(tx, lifted_points[idx], box)
                   | segments_blocked(rx, lifted_points[idx], box))
            keep[idx[hit]] = False
        if keep.all():
            return echoes
        return FrameEchoes(echoes.power[keep], echoes.delay[keep], points[keep])

    def target_echoes(self, targets) -> list[FrameEchoes]:
        """First-order body echoes for every frame, with furniture and body occlusion."""
        targets = list(targets)
        if not targets:
            return [FrameEchoes.empty() for _ in self.frames]
        elements = body_elements(targets, self._size)
        boxes = Boxes.concat([self._furniture, target_boxes(targets)])
        results = []
        for frame in self.frames:
            results.append(self._trace_elements(frame, elements, boxes))
        return results

    def _trace_elements(self, frame: Frame, elements: ElementSet, boxes: Boxes) -> FrameEchoes:
        cfg, rx = frame.config, frame.receiver
        tx_pos = np.asarray(cfg.tx_position, float)
        tx_normal = np.asarray(cfg.tx_normal, float)
        to_el = elements.centers - tx_pos
        d_in = np.linalg.norm(to_el, axis=1)
        cos_src = to_el @ tx_normal / d_in
        cos_inc = -np.einsum("ij,ij->i", elements.normals, to_el) / d_in
        to_rx = rx.position - elements.centers
        d_out = np.linalg.norm(to_rx, axis=1)
        cos_out = np.einsum("ij,ij->i", elements.normals, to_rx) / d_out
        cos_rx = -(to_rx @ rx.normal) / d_out
        ok = ((cos_src > 0) & (cos_inc > 0) & (cos_out > 0)
              & (cos_rx >= math.cos(math.radians(rx.fov_deg)) - 1e-12))
        if not ok.any():
            return FrameEchoes.empty()
        idx = np.flatnonzero(ok)
        start = lifted(elements.centers[idx], elements.normals[idx])
        blocked = segments_blocked(tx_pos, start, boxes) | segments_blocked(rx.position, start, boxes)
        idx = idx[~blocked]
        n = cfg.tx_lambertian
        o = elements.order[idx]
        incident = ((n + 1) / (2 * np.pi * d_in[idx] ** 2) * cos_src[idx] ** n * cos_inc[idx]
                    * elements.areas[idx])
        coupling = (elements.reflectivity[idx] * (o + 1) / (2 * np.pi * d_out[idx] ** 2)
                    * cos_out[idx] ** o * rx.area * cos_rx[idx] * rx.gain)
        power = cfg.tx_power * incident * coupling
        delay = (d_in[idx] + d_out[idx]) / SPEED_OF_LIGHT
        return FrameEchoes(power, delay, elements.centers[idx])

