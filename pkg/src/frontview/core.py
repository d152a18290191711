"""Geometric primitives shared by every stage of the pipeline.

Conventions
-----------
* Sensor frame: X forward, Y left, Z up (meters).
* Heading is measured counter-clockwise from +X about +Z and is kept in
  ``[0, 2*pi)``.
* A box's ``l`` spans the heading axis, ``w`` the perpendicular horizontal
  axis and ``h`` the Z axis. ``(cx, cy, cz)`` is the geometric center.
* Corner order: bottom face counter-clockwise seen from +Z starting at the
  (+l, +w) corner, then the top face in the same order.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Local corner signs (along l, along w, along h) in the documented order.
CORNER_SIGNS = np.array(
    [
        [1, 1, -1],
        [-1, 1, -1],
        [-1, -1, -1],
        [1, -1, -1],
        [1, 1, 1],
        [-1, 1, 1],
        [-1, -1, 1],
        [1, -1, 1],
    ],
    dtype=np.float64,
)


def normalize_angle(angle: float) -> float:
    """Wrap an angle into ``[0, 2*pi)``."""
    a = math.fmod(angle, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    if a >= TWO_PI:
        a = 0.0
    return a


class ClassId(enum.Enum):
    CAR = "Car"
    PEDESTRIAN = "Pedestrian"
    CYCLIST = "Cyclist"
    PERSON = "Person"

    @classmethod
    def parse(cls, name: str) -> "ClassId":
        for member in cls:
            if member.value.lower() == name.lower():
                return member
        raise ValueError(f"unknown class name {name!r}")

    def stage1(self) -> "ClassId":
        """Merged label used by the proposal stage (Car or Person)."""
        if self in (ClassId.PEDESTRIAN, ClassId.CYCLIST, ClassId.PERSON):
            return ClassId.PERSON
        return ClassId.CAR

    def matches(self, other: "ClassId") -> bool:
        """True if ``other`` belongs to this class; Person covers Pedestrian and Cyclist."""
        if self is ClassId.PERSON:
            return other.stage1() is ClassId.PERSON
        return self is other


STAGE1_CLASSES = (ClassId.CAR, ClassId.PERSON)
FINAL_CLASSES = (ClassId.CAR, ClassId.PEDESTRIAN, ClassId.CYCLIST)


@dataclass(frozen=True)
class Point3:
    x: float
    y: float
    z: float
    intensity: float = 0.0

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.intensity)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite point {vals}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity {self.intensity} outside [0, 1]")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.intensity], dtype=np.float64)


class PointCloud:
    """Ordered LiDAR returns as an ``(N, 4)`` float64 array of x, y, z, intensity.

    Row order is preserved by every operation so that row indices can be
    used to identify points.
    """

    frame = "sensor"

    def __init__(self, points=None):
        if points is None:
            arr = np.zeros((0, 4), dtype=np.float64)
        else:
            arr = np.asarray(points, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != 4:
                if arr.size == 0:
                    arr = np.zeros((0, 4), dtype=np.float64)
                else:
                    raise ValueError(f"expected an (N, 4) array, got shape {arr.shape}")
        self.points = np.ascontiguousarray(arr)

    @classmethod
    def from_points(cls, pts: Iterable[Point3]) -> "PointCloud":
        rows = [p.as_array() for p in pts]
        return cls(np.array(rows) if rows else None)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i: int) -> Point3:
        x, y, z, it = self.points[i]
        return Point3(float(x), float(y), float(z), float(it))

    @property
    def xyz(self) -> np.ndarray:
        return self.points[:, :3]

    def __repr__(self) -> str:
        return f"PointCloud(n={len(self)})"


@dataclass(frozen=True)
class Box3D:
    cx: float
    cy: float
    cz: float
    h: float
    w: float
    l: float
    heading: float = 0.0

    def __post_init__(self):
        if not (self.h > 0 and self.w > 0 and self.l > 0):
            raise ValueError(f"box sizes must be positive, got h={self.h} w={self.w} l={self.l}")
        object.__setattr__(self, "heading", normalize_angle(float(self.heading)))

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.cz])

    @property
    def size(self) -> np.ndarray:
        return np.array([self.h, self.w, self.l])

    def as_array(self) -> np.ndarray:
        """``[cx, cy, cz, h, w, l, heading]``."""
        return np.array([self.cx, self.cy, self.cz, self.h, self.w, self.l, self.heading])

    @classmethod
    def from_array(cls, a: Sequence[float]) -> "Box3D":
        return cls(*(float(v) for v in a[:7]))

    def translated(self, dx: float, dy: float, dz: float) -> "Box3D":
        return Box3D(self.cx + dx, self.cy + dy, self.cz + dz, self.h, self.w, self.l, self.heading)

    def rotated(self, angle: float) -> "Box3D":
        """Rotate the whole box about the sensor Z axis."""
        c, s = math.cos(angle), math.sin(angle)
        return Box3D(
            c * self.cx - s * self.cy,
            s * self.cx + c * self.cy,
            self.cz,
            self.h,
            self.w,
            self.l,
            self.heading + angle,
        )

    def volume(self) -> float:
        return self.h * self.w * self.l


def rotate_about_z(p: Point3, angle: float) -> Point3:
    if not math.isfinite(angle):
        raise ValueError("angle must be finite")
    c, s = math.cos(angle), math.sin(angle)
    return Point3(c * p.x - s * p.y, s * p.x + c * p.y, p.z, p.intensity)


def rotate_xy(xy: np.ndarray, angle: float) -> np.ndarray:
    """Counter-clockwise rotation of the first two columns of ``xy``; other columns are copied."""
    out = np.array(xy, dtype=np.float64, copy=True)
    c, s = math.cos(angle), math.sin(angle)
    x = xy[..., 0]
    y = xy[..., 1]
    out[..., 0] = c * x - s * y
    out[..., 1] = s * x + c * y
    return out


def corners_array(box: Box3D) -> np.ndarray:
    """``(8, 3)`` corner coordinates in the documented order."""
    local = CORNER_SIGNS * (0.5 * np.array([box.l, box.w, box.h]))
    c, s = math.cos(box.heading), math.sin(box.heading)
    out = np.empty((8, 3))
    out[:, 0] = c * local[:, 0] - s * local[:, 1] + box.cx
    out[:, 1] = s * local[:, 0] + c * local[:, 1] + box.cy
    out[:, 2] = local[:, 2] + box.cz
    return out


def box_corners(box: Box3D) -> list[Point3]:
    return [Point3(float(x), float(y), float(z)) for x, y, z in corners_array(box)]


def bev_corners(box: Box3D) -> np.ndarray:
    """Counter-clockwise ``(4, 2)`` footprint of the box in the XY plane."""
    return corners_array(box)[:4, :2]


def to_box_frame(xyz: np.ndarray, box: Box3D) -> np.ndarray:
    """Express ``(N, 3)`` points in the box's local (l, w, h) axes."""
    d = np.asarray(xyz, dtype=np.float64)[..., :3] - box.center
    c, s = math.cos(box.heading), math.sin(box.heading)
    local = np.empty_like(d)
    local[..., 0] = c * d[..., 0] + s * d[..., 1]
    local[..., 1] = -s * d[..., 0] + c * d[..., 1]
    local[..., 2] = d[..., 2]
    return local


def points_in_box(xyz: np.ndarray, box: Box3D, eps: float = 1e-9) -> np.ndarray:
    """Vectorised membership test; boundary points (within ``eps``) count as inside."""
    local = to_box_frame(xyz, box)
    half = 0.5 * np.array([box.l, box.w, box.h]) + eps
    return np.all(np.abs(local) <= half, axis=-1)


def point_in_box(p: Point3, box: Box3D) -> bool:
    return bool(points_in_box(np.array([p.x, p.y, p.z]), box))
