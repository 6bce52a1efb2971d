"""Synthetic depth frames from a fixed pinhole camera.

Depth is the distance along the camera's forward axis (z-depth), so a flat
wall parallel to the image plane reads a constant value. One ray per pixel
through the pixel center; pedestrian cylinders expose their lateral surface
only (no end caps, invisible for the poses used here).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DomainError
from .scene import Bounds, Scene


@dataclass(frozen=True)
class CameraModel:
    x: float
    y: float
    z: float
    yaw_rad: float
    pitch_rad: float = 0.0
    hfov_rad: float = math.radians(90.0)
    vfov_rad: float | None = None  # None: derived from hfov for square pixels
    width: int = 64
    height: int = 48
    near_clip: float = 0.1
    far_clip: float = 12.0
    frame_rate_hz: float = 30.0

    def __post_init__(self):
        if not 0 < self.near_clip < self.far_clip:
            raise ValueError("need 0 < near_clip < far_clip")
        if self.width < 8 or self.height < 8:
            raise ValueError("resolution must be at least 8x8")
        if self.frame_rate_hz <= 0:
            raise ValueError("frame_rate_hz must be > 0")

    @property
    def vfov(self) -> float:
        if self.vfov_rad is not None:
            return self.vfov_rad
        return 2.0 * math.atan(math.tan(self.hfov_rad / 2.0) * self.height / self.width)


@dataclass
class DepthFrame:
    tick: int
    depth: np.ndarray  # (height, width) float32, meters
    mask: np.ndarray | None = None  # (height, width) uint8, 1 = missing

    def __post_init__(self):
        self.depth = np.asarray(self.depth, dtype=np.float32)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]


@lru_cache(maxsize=16)
def _ray_grid(camera: CameraModel) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-pixel ray directions with unit forward component.

    With rays expressed as forward + u*right + v*up, the ray parameter t of any
    intersection equals its z-depth directly.
    """
    w, h = camera.width, camera.height
    tan_h = math.tan(camera.hfov_rad / 2.0)
    tan_v = math.tan(camera.vfov / 2.0)
    u = (2.0 * (np.arange(w) + 0.5) / w - 1.0) * tan_h
    v = (1.0 - 2.0 * (np.arange(h) + 0.5) / h) * tan_v

    cp, sp = math.cos(camera.pitch_rad), math.sin(camera.pitch_rad)
    cy, sy = math.cos(camera.yaw_rad), math.sin(camera.yaw_rad)
    forward = np.array([cp * cy, cp * sy, sp])
    right = np.array([sy, -cy, 0.0])
    up = np.cross(right, forward)

    uu, vv = np.meshgrid(u, v)  # (h, w)
    dirs = (
        forward[None, None, :]
        + uu[..., None] * right[None, None, :]
        + vv[..., None] * up[None, None, :]
    )
    return dirs[..., 0].copy(), dirs[..., 1].copy(), dirs[..., 2].copy()


@lru_cache(maxsize=16)
def _wall_depth(bounds: Bounds, camera: CameraModel) -> np.ndarray:
    """z-depth of the nearest bounding wall per pixel (walls span full height)."""
    dx, dy, _ = _ray_grid(camera)
    t_min = np.full(dx.shape, np.inf)
    for plane, origin, d in (
        (bounds.x_min, camera.x, dx),
        (bounds.x_max, camera.x, dx),
        (bounds.y_min, camera.y, dy),
        (bounds.y_max, camera.y, dy),
    ):
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (plane - origin) / d
        t = np.where((d != 0.0) & (t > 0.0), t, np.inf)
        t_min = np.minimum(t_min, t)
    return t_min


def render_background(bounds: Bounds, camera: CameraModel) -> np.ndarray:
    """Blocker-free depth image (float32), clamped to [near_clip, far_clip]."""
    depth = np.clip(_wall_depth(bounds, camera), camera.near_clip, camera.far_clip)
    return depth.astype(np.float32)


def render_depth(scene: Scene, camera: CameraModel) -> DepthFrame:
    if not scene.bounds.contains(camera.x, camera.y):
        raise DomainError("camera must be inside scene bounds")
    dx, dy, dz = _ray_grid(camera)
    t_min = _wall_depth(scene.bounds, camera).copy()

    a = dx * dx + dy * dy  # quadratic leading coefficient, shared by all cylinders
    for ped in scene.pedestrians:
        ox, oy = camera.x - ped.x, camera.y - ped.y
        b = 2.0 * (dx * ox + dy * oy)
        c = ox * ox + oy * oy - ped.radius * ped.radius
        disc = b * b - 4.0 * a * c
        hit = disc > 0.0
        if not hit.any():
            continue
        sq = np.sqrt(np.where(hit, disc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t_near = (-b - sq) / (2.0 * a)
            t_far = (-b + sq) / (2.0 * a)
        for t in (t_near, t_far):
            z_hit = camera.z + t * dz
            ok = hit & (t > 0.0) & (z_hit >= 0.0) & (z_hit <= ped.height)
            t_min = np.where(ok, np.minimum(t_min, t), t_min)

    depth = np.clip(t_min, camera.near_clip, camera.far_clip).astype(np.float32)
    return DepthFrame(tick=scene.tick, depth=depth)


def apply_mask(frame: DepthFrame, rect: tuple[int, int, int, int]) -> DepthFrame:
    """Zero out a rectangle and mark it in the mask channel (1 = missing)."""
    x0, y0, w, h = rect
    if w < 0 or h < 0 or x0 < 0 or y0 < 0 or x0 + w > frame.width or y0 + h > frame.height:
        raise DomainError(f"mask rect {rect} outside {frame.width}x{frame.height} frame")
    depth = frame.depth.copy()
    mask = np.zeros_like(depth, dtype=np.uint8)
    depth[y0 : y0 + h, x0 : x0 + w] = 0.0
    mask[y0 : y0 + h, x0 : x0 + w] = 1
    return DepthFrame(tick=frame.tick, depth=depth, mask=mask)


def write_pgm(frame: DepthFrame, path, near_clip: float, far_clip: float) -> None:
    """Debug dump: binary 16-bit PGM, depth linearly quantized over [near, far]."""
    scaled = (frame.depth - near_clip) / (far_clip - near_clip)
    q = np.clip(np.rint(scaled * 65535.0), 0, 65535).astype(">u2")
    with open(path, "wb") as f:
        f.write(f"P5\n{frame.width} {frame.height}\n65535\n".encode("ascii"))
        f.write(q.tobytes())
