"""Plan-view world geometry and pedestrian mobility.

Scenes are immutable snapshots: stepping returns a new Scene, so values can be
shared freely across threads. All geometry is 2D plan-view; node and pedestrian
heights matter only to the depth renderer and to the blockage height gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple


@dataclass(frozen=True)
class Bounds:
    """Axis-aligned rectangle in meters."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"degenerate bounds {self}")

    def contains(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min


@dataclass(frozen=True)
class Node:
    """Static radio endpoint: base station or station."""

    node_id: str
    x: float
    y: float
    antenna_height: float = 1.4


@dataclass(frozen=True)
class Pedestrian:
    """Moving blocker: plan-view circle, rendered as a vertical cylinder."""

    ped_id: int
    x: float
    y: float
    vx: float
    vy: float
    radius: float = 0.3
    height: float = 1.7

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError(f"pedestrian {self.ped_id}: radius must be > 0")
        if self.height <= 0:
            raise ValueError(f"pedestrian {self.ped_id}: height must be > 0")

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)


@dataclass(frozen=True)
class Scene:
    bounds: Bounds
    base_stations: tuple[Node, ...]
    station: Node
    pedestrians: tuple[Pedestrian, ...]
    tick: int = 0
    dt: float = 1.0 / 30.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be > 0")
        if self.tick < 0:
            raise ValueError("tick must be >= 0")
        for node in (*self.base_stations, self.station):
            if not self.bounds.contains(node.x, node.y):
                raise ValueError(f"node {node.node_id} outside bounds")
        for ped in self.pedestrians:
            if not self.bounds.contains(ped.x, ped.y):
                raise ValueError(f"pedestrian {ped.ped_id} outside bounds")


class Crossing(NamedTuple):
    pedestrian_id: int
    chord: float


def _advance_axis(p: float, v: float, dt: float, lo: float, hi: float) -> tuple[float, float]:
    # Specular reflection of the pedestrian center; cap the loop so a
    # pathological speed cannot spin forever.
    p = p + v * dt
    for _ in range(16):
        if p < lo:
            p, v = 2.0 * lo - p, -v
        elif p > hi:
            p, v = 2.0 * hi - p, -v
        else:
            return p, v
    return min(max(p, lo), hi), v


def step_scene(scene: Scene) -> Scene:
    """Advance every pedestrian by dt with specular wall reflection; tick += 1."""
    b = scene.bounds
    moved = []
    for ped in scene.pedestrians:
        x, vx = _advance_axis(ped.x, ped.vx, scene.dt, b.x_min, b.x_max)
        y, vy = _advance_axis(ped.y, ped.vy, scene.dt, b.y_min, b.y_max)
        moved.append(replace(ped, x=x, y=y, vx=vx, vy=vy))
    return replace(scene, pedestrians=tuple(moved), tick=scene.tick + 1)


def los_crossings(scene: Scene, tx: Node, rx: Node) -> list[Crossing]:
    """Pedestrians whose circle strictly intersects the open segment tx->rx.

    Returns the chord length each circle cuts out of the segment; an empty
    list means the link is line-of-sight. Tangency does not count.
    """
    ax, ay = tx.x, tx.y
    dx, dy = rx.x - ax, rx.y - ay
    length = math.hypot(dx, dy)
    if length == 0.0:
        raise ValueError("tx and rx positions coincide")
    ux, uy = dx / length, dy / length

    out = []
    for ped in scene.pedestrians:
        cx, cy = ped.x - ax, ped.y - ay
        along = cx * ux + cy * uy
        perp_sq = cx * cx + cy * cy - along * along
        half_sq = ped.radius * ped.radius - perp_sq
        if half_sq <= 0.0:
            continue  # tangent or disjoint
        half = math.sqrt(half_sq)
        lo = max(along - half, 0.0)
        hi = min(along + half, length)
        if hi > lo:
            out.append(Crossing(ped.ped_id, hi - lo))
    return out
