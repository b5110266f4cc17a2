"""Ground-truth terrain, simulated LiDAR and robot attitude on the terrain.

Rotation convention used across the package: a body-to-world rotation is
``Rz(yaw) @ Ry(pitch) @ Rx(roll)`` (right-handed, z up). Leveling a sensor
cloud therefore applies ``Ry(pitch) @ Rx(roll)`` and keeps yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) into (-pi, pi]."""
    w = np.mod(np.asarray(a, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.ndim(w) == 0 else w


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def body_to_world(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


# -- terrain primitives -------------------------------------------------------


@dataclass(frozen=True)
class GaussianHill:
    center: tuple[float, float]
    amplitude: float
    spread: float

    kind = "gaussian_hill"

    def height(self, x, y):
        d2 = (x - self.center[0]) ** 2 + (y - self.center[1]) ** 2
        return self.amplitude * np.exp(-d2 / (2.0 * self.spread**2))

    def gradient(self, x, y):
        dx = x - self.center[0]
        dy = y - self.center[1]
        h = self.height(x, y)
        s2 = self.spread**2
        return -h * dx / s2, -h * dy / s2


@dataclass(frozen=True)
class Ridge:
    """Gaussian cross-section around the segment between two points."""

    start: tuple[float, float]
    end: tuple[float, float]
    height_: float
    width: float

    kind = "ridge"

    def _offset(self, x, y):
        ax, ay = self.start
        bx, by = self.end
        ux, uy = bx - ax, by - ay
        len2 = ux * ux + uy * uy
        if len2 == 0.0:
            t = np.zeros_like(np.asarray(x, dtype=float))
        else:
            t = np.clip(((x - ax) * ux + (y - ay) * uy) / len2, 0.0, 1.0)
        return x - (ax + t * ux), y - (ay + t * uy)

    def height(self, x, y):
        ox, oy = self._offset(x, y)
        return self.height_ * np.exp(-(ox * ox + oy * oy) / (2.0 * self.width**2))

    def gradient(self, x, y):
        ox, oy = self._offset(x, y)
        h = self.height(x, y)
        w2 = self.width**2
        return -h * ox / w2, -h * oy / w2


@dataclass(frozen=True)
class Step:
    """Half-plane step: ``rise`` is added where ``(p - point) . normal >= 0``.

    A positive ``softness`` replaces the hard edge by a tanh ramp of that width.
    """

    point: tuple[float, float]
    normal: tuple[float, float]
    rise: float
    softness: float = 0.0

    kind = "step"

    def _signed(self, x, y):
        nx, ny = self.normal
        n = math.hypot(nx, ny)
        return ((x - self.point[0]) * nx + (y - self.point[1]) * ny) / n

    def height(self, x, y):
        s = self._signed(x, y)
        if self.softness > 0.0:
            return 0.5 * self.rise * (1.0 + np.tanh(s / self.softness))
        return np.where(s >= 0.0, self.rise, 0.0)

    def gradient(self, x, y):
        s = self._signed(x, y)
        nx, ny = self.normal
        n = math.hypot(nx, ny)
        if self.softness > 0.0:
            g = 0.5 * self.rise / self.softness / np.cosh(s / self.softness) ** 2
        else:
            g = np.zeros_like(s)
        return g * nx / n, g * ny / n


@dataclass(frozen=True)
class Plane:
    gradient_: tuple[float, float]

    kind = "plane"

    def height(self, x, y):
        return self.gradient_[0] * x + self.gradient_[1] * y

    def gradient(self, x, y):
        ones = np.ones_like(np.asarray(x, dtype=float))
        return self.gradient_[0] * ones, self.gradient_[1] * ones


Primitive = GaussianHill | Ridge | Step | Plane


@dataclass(frozen=True)
class TerrainField:
    primitives: tuple = ()
    base_height: float = 0.0
    rng_seed: int = 0

    def height(self, x, y):
        """Vectorised terrain height; scalars in, float out."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.full(np.broadcast(x, y).shape, float(self.base_height))
        for prim in self.primitives:
            z = z + prim.height(x, y)
        return float(z) if z.ndim == 0 else z

    def gradient(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        gx = np.zeros(shape)
        gy = np.zeros(shape)
        for prim in self.primitives:
            px, py = prim.gradient(x, y)
            gx = gx + px
            gy = gy + py
        return gx, gy

    def slope(self, x, y):
        """True inclination angle (rad) of the ground surface."""
        gx, gy = self.gradient(x, y)
        return np.arctan(np.hypot(gx, gy))


def terrain_height(field_: TerrainField, x: float, y: float) -> float:
    return field_.height(x, y)


# -- poses, clouds, sensor ----------------------------------------------------


@dataclass(frozen=True)
class Pose:
    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("roll", "pitch", "yaw"):
            object.__setattr__(self, name, wrap_angle(getattr(self, name)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    def rotation(self) -> np.ndarray:
        return body_to_world(self.roll, self.pitch, self.yaw)


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "sensor"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.frame not in ("sensor", "world"):
            raise ValueError(f"unknown frame {self.frame!r}")
        self.points = pts

    def __len__(self) -> int:
        return len(self.points)


@dataclass(frozen=True)
class LidarSpec:
    max_range: float = 7.5
    azimuth_count: int = 180
    elevation_angles: tuple = field(
        default_factory=lambda: tuple(np.deg2rad(np.linspace(-45.0, -3.0, 22)).tolist())
    )
    noise_std: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError("max_range must be > 0")
        if self.azimuth_count < 1:
            raise ValueError("azimuth_count must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


def ray_directions(spec: LidarSpec) -> np.ndarray:
    """Unit ray directions in the sensor frame, azimuth-major order."""
    az = 2.0 * np.pi * np.arange(spec.azimuth_count) / spec.azimuth_count
    el = np.asarray(spec.elevation_angles, dtype=float)
    A, E = np.meshgrid(az, el, indexing="ij")
    return np.stack(
        [np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1
    ).reshape(-1, 3)


def sample_lidar(
    field_: TerrainField,
    pose: Pose,
    spec: LidarSpec,
    march_step: float = 0.05,
    tol: float = 1e-5,
) -> PointCloud:
    """First-hit ray cast of every (azimuth, elevation) beam from ``pose``.

    Rays are marched at ``march_step`` and the first sign change of
    ``ray_z - terrain_z`` is refined by bisection to a bracket below ``tol``.
    Range noise is applied along the ray; the returned cloud is in the
    sensor frame.
    """
    dirs_s = ray_directions(spec)
    R = pose.rotation()
    dirs_w = dirs_s @ R.T
    origin = pose.position

    n_steps = max(1, int(math.ceil(spec.max_range / march_step)))
    ts = np.minimum(np.arange(1, n_steps + 1) * march_step, spec.max_range)

    # (rays, steps)
    p = origin + ts[None, :, None] * dirs_w[:, None, :]
    c = p[..., 2] - field_.height(p[..., 0], p[..., 1])
    below = c <= 0.0
    hit = below.any(axis=1)
    first = np.argmax(below, axis=1)

    rng = np.random.default_rng(spec.rng_seed)
    noise = rng.normal(0.0, spec.noise_std, size=len(dirs_w)) if spec.noise_std > 0 else np.zeros(len(dirs_w))

    idx = np.flatnonzero(hit)
    if idx.size == 0:
        return PointCloud(np.empty((0, 3)), frame="sensor")
    k = first[idx]
    hi = ts[k]
    lo = np.where(k > 0, ts[np.maximum(k - 1, 0)], 0.0)
    d = dirs_w[idx]
    while np.max(hi - lo) > tol:
        mid = 0.5 * (lo + hi)
        p = origin + mid[:, None] * d
        up = p[:, 2] - field_.height(p[:, 0], p[:, 1]) > 0.0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    t_hit = 0.5 * (lo + hi)
    keep = t_hit <= spec.max_range
    idx, t_hit = idx[keep], t_hit[keep]
    t_meas = t_hit + noise[idx]
    pts = t_meas[:, None] * dirs_s[idx]
    return PointCloud(pts, frame="sensor")


def level_pointcloud(cloud: PointCloud, roll: float, pitch: float) -> PointCloud:
    """Rotate a sensor-frame cloud so its z axis is gravity aligned (yaw kept)."""
    R = rot_y(pitch) @ rot_x(roll)
    return PointCloud(cloud.points @ R.T, frame="world")


def attitude_from_normal(normal, yaw: float) -> tuple[float, float]:
    """Roll and pitch that tilt a yawed body so its z axis equals ``normal``."""
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    if n[2] < 0:
        n = -n
    m = rot_z(-yaw) @ n
    roll = -math.asin(max(-1.0, min(1.0, m[1])))
    pitch = math.atan2(m[0], m[2])
    return roll, pitch


def fit_plane(x, y, z):
    """Least-squares ``z = a + b*x + c*y``; returns (a, b, c) or None if rank deficient."""
    A = np.column_stack([np.ones(len(x)), x, y])
    coef, _, rank, _ = np.linalg.lstsq(A, z, rcond=None)
    if rank < 3:
        return None
    return coef


def attitude_on_terrain(
    field_: TerrainField, x: float, y: float, yaw: float, footprint_half_extent: float
) -> tuple[float, float, float]:
    """(z, roll, pitch) of a square footprint resting on the terrain."""
    if not footprint_half_extent > 0:
        raise ValueError("footprint_half_extent must be > 0")
    u = np.linspace(-footprint_half_extent, footprint_half_extent, 5)
    U, V = np.meshgrid(u, u, indexing="ij")
    c, s = math.cos(yaw), math.sin(yaw)
    dx = (c * U - s * V).ravel()
    dy = (s * U + c * V).ravel()
    zs = field_.height(x + dx, y + dy)
    coef = fit_plane(dx, dy, zs)
    if coef is None:
        return float(field_.height(x, y)), 0.0, 0.0
    a, b, cc = coef
    roll, pitch = attitude_from_normal((-b, -cc, 1.0), yaw)
    return float(a), roll, pitch


def pose_on_terrain(field_: TerrainField, x: float, y: float, yaw: float, half_extent: float) -> Pose:
    z, roll, pitch = attitude_on_terrain(field_, x, y, yaw, half_extent)
    return Pose(x, y, z, roll, pitch, yaw)


def sensor_pose(pose: Pose, mount_height: float) -> Pose:
    """Pose of a sensor mounted ``mount_height`` above the base along body z."""
    offset = pose.rotation() @ np.array([0.0, 0.0, mount_height])
    return replace(pose, x=pose.x + offset[0], y=pose.y + offset[1], z=pose.z + offset[2])


def make_field(primitives: Sequence, base_height: float = 0.0, rng_seed: int = 0) -> TerrainField:
    return TerrainField(tuple(primitives), float(base_height), int(rng_seed))
