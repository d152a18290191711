"""Object point extrusion from proposals, canonical frames and augmentation."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .core import Box3D, PointCloud, normalize_angle, rotate_xy
from .fvproj import Projection, ProjectionConfig, box_to_map_rect, project_points

POINTS_MAGIC = b"FVP1"
MAX_ROTATION = math.pi / 10


@dataclass(frozen=True)
class CylinderFragment:
    """Map rectangle ``(b_x, b_y, b_w, b_h)`` at ``stride`` plus a radial interval."""

    b_x: float
    b_y: float
    b_w: float
    b_h: float
    r1: float
    r2: float
    stride: int = 1

    def __post_init__(self):
        if not (0.0 <= self.r1 <= self.r2):
            raise ValueError(f"invalid radial interval [{self.r1}, {self.r2}]")
        if self.b_w <= 0 or self.b_h <= 0:
            raise ValueError("fragment box sizes must be positive")

    def pixel_rect(self) -> tuple[float, float, float, float]:
        """``(x0, y0, x1, y1)`` on the upscaled map."""
        cx, cy = self.b_x * self.stride, self.b_y * self.stride
        return cx - self.b_w / 2, cy - self.b_h / 2, cx + self.b_w / 2, cy + self.b_h / 2

    @classmethod
    def from_pixel_box(cls, cx, cy, w, h, r1, r2, max_range: float = np.inf) -> "CylinderFragment":
        """Build a fragment from possibly unordered or out-of-range distances."""
        lo, hi = sorted((float(r1), float(r2)))
        lo = min(max(lo, 0.0), max_range)
        hi = min(max(hi, 0.0), max_range)
        return cls(float(cx), float(cy), max(float(w), 1e-6), max(float(h), 1e-6), lo, hi, 1)

    @classmethod
    def from_box(cls, box: Box3D, cfg: ProjectionConfig, margin_px: float = 0.0,
                 margin_m: float = 0.0) -> "CylinderFragment":
        """Tightest fragment around a 3D box, optionally padded."""
        x0, y0, x1, y1, rmin, rmax = box_to_map_rect(box, cfg)
        return cls.from_pixel_box((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0 + 2 * margin_px,
                                  y1 - y0 + 2 * margin_px, rmin - margin_m, rmax + margin_m, cfg.max_range)


@dataclass
class ObjectPointSet:
    points: np.ndarray  # (n, 4) x, y, z, intensity
    frame: str = "sensor"
    indices: Optional[np.ndarray] = None  # rows of the source cloud
    fragment: Optional[CylinderFragment] = None
    rotation: float = 0.0  # applied sensor -> canonical rotation about Z
    centroid_offset: Optional[np.ndarray] = None

    def __len__(self):
        return self.points.shape[0]


def extrude_points(cloud: PointCloud, frag: CylinderFragment, cfg: ProjectionConfig,
                   projection: Optional[Projection] = None) -> ObjectPointSet:
    """Points of ``cloud`` inside the cylinder fragment.

    A point is kept when its base-resolution cell lies in the cell range
    covered by the fragment rectangle (bounds inclusive) and its planar
    radial distance lies in ``[r1, r2]``. Cloud order is preserved.
    """
    proj = projection if projection is not None else project_points(cloud.points[:, :3], cfg)
    x0, y0, x1, y1 = frag.pixel_rect()
    c0 = math.floor(x0 / cfg.scale_cols)
    c1 = math.floor(x1 / cfg.scale_cols)
    r0 = math.floor(y0 / cfg.scale_rows)
    r1_ = math.floor(y1 / cfg.scale_rows)
    keep = (
        proj.valid
        & (proj.v >= c0) & (proj.v <= c1)
        & (proj.u >= r0) & (proj.u <= r1_)
        & (proj.radial >= frag.r1) & (proj.radial <= frag.r2)
    )
    idx = np.flatnonzero(keep)
    return ObjectPointSet(cloud.points[idx].copy(), "sensor", idx, frag)


def fragment_azimuth(frag: CylinderFragment, cfg: ProjectionConfig) -> float:
    cx = frag.b_x * frag.stride
    phi = cfg.phi_min + (cx / cfg.scale_cols) * cfg.delta_phi
    if not math.isfinite(phi):
        raise ValueError("fragment centre azimuth is undefined")
    return phi


def to_canonical(pts: ObjectPointSet, frag: CylinderFragment, cfg: ProjectionConfig) -> ObjectPointSet:
    """Rotate about Z so that the fragment's central azimuth points along +X."""
    if pts.frame != "sensor":
        raise ValueError(f"expected sensor-frame points, got {pts.frame!r}")
    angle = -fragment_azimuth(frag, cfg)
    return replace(pts, points=rotate_xy(pts.points, angle), frame="canonical", rotation=angle, fragment=frag)


def from_canonical(pts: ObjectPointSet) -> ObjectPointSet:
    out = pts
    if out.frame == "normalized":
        out = denormalize_centroid(out)
    return replace(out, points=rotate_xy(out.points, -out.rotation), frame="sensor", rotation=0.0)


def box_to_canonical(box: Box3D, rotation: float) -> Box3D:
    return box.rotated(rotation)


def box_from_canonical(box: Box3D, rotation: float, centroid: Optional[np.ndarray] = None) -> Box3D:
    if centroid is not None:
        box = box.translated(*centroid[:3])
    return box.rotated(-rotation)


def normalize_centroid(pts: ObjectPointSet) -> ObjectPointSet:
    if len(pts) == 0:
        raise ValueError("cannot normalise an empty point set")
    mean = pts.points[:, :3].mean(axis=0)
    out = pts.points.copy()
    out[:, :3] -= mean
    return replace(pts, points=out, frame="normalized", centroid_offset=mean)


def denormalize_centroid(pts: ObjectPointSet) -> ObjectPointSet:
    if pts.centroid_offset is None:
        raise ValueError("point set carries no centroid offset")
    out = pts.points.copy()
    out[:, :3] += pts.centroid_offset
    return replace(pts, points=out, frame="canonical", centroid_offset=None)


def augment(pts: ObjectPointSet, gt_box: Box3D, rng: np.random.Generator,
            flip: Optional[bool] = None, angle: Optional[float] = None) -> tuple[ObjectPointSet, Box3D]:
    """Random mirror ``y -> -y`` (probability 1/2) then rotation in ``[-pi/10, pi/10]`` about Z.

    The regression target moves with the points. ``flip`` and ``angle``
    override the random draws; the generator is consumed identically either
    way so a seeded pipeline stays aligned.
    """
    do_flip = rng.random() < 0.5
    alpha = rng.uniform(-MAX_ROTATION, MAX_ROTATION)
    if flip is not None:
        do_flip = flip
    if angle is not None:
        alpha = angle
    p = pts.points.copy()
    box = gt_box
    if do_flip:
        p[:, 1] = -p[:, 1]
        box = Box3D(box.cx, -box.cy, box.cz, box.h, box.w, box.l, normalize_angle(-box.heading))
    if alpha != 0.0:
        p = rotate_xy(p, alpha)
        box = box.rotated(alpha)
    return replace(pts, points=p), box


def perturb_box(box: Box3D, rng: np.random.Generator, center_jitter: float = 0.1,
                scale_jitter: float = 0.05) -> Box3D:
    """Jitter a crop region: centre by U[-0.1, 0.1] m per axis, sizes by U[0.95, 1.05]."""
    d = rng.uniform(-center_jitter, center_jitter, size=3)
    s = rng.uniform(1 - scale_jitter, 1 + scale_jitter, size=3)
    return Box3D(box.cx + d[0], box.cy + d[1], box.cz + d[2], box.h * s[0], box.w * s[1], box.l * s[2],
                 box.heading)


def sample_points(points: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """Resample to exactly ``n`` rows with replacement."""
    if len(points) == 0:
        raise ValueError("cannot sample from an empty point set")
    return points[rng.integers(0, len(points), size=n)]


def save_point_set(path, pts: ObjectPointSet) -> None:
    with open(path, "wb") as f:
        f.write(POINTS_MAGIC + struct.pack("<I", len(pts)))
        f.write(np.asarray(pts.points, dtype="<f4").tobytes())


def load_point_set(path) -> ObjectPointSet:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8 or raw[:4] != POINTS_MAGIC:
        raise ValueError(f"{path}: not a point-set file")
    (n,) = struct.unpack("<I", raw[4:8])
    if len(raw) != 8 + 16 * n:
        raise ValueError(f"{path}: expected {n} points, file size {len(raw)} does not match")
    pts = np.frombuffer(raw[8:], dtype="<f4").reshape(n, 4).astype(np.float64)
    return ObjectPointSet(pts)
