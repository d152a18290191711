"""Cylindrical front-view projection of LiDAR point clouds.

A point ``(x, y, z)`` has elevation ``theta = asin(z / |p|)`` and azimuth
``phi = asin(y / sqrt(x^2 + y^2))``. Cells are indexed by
``u = floor((theta - theta_min) / delta_theta)`` (rows) and
``v = floor((phi - phi_min) / delta_phi)`` (columns). Each occupied cell
stores the height ``z``, the planar radial distance ``sqrt(x^2 + y^2)`` and
the intensity of the nearest point that falls into it.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from .core import Point3, PointCloud

MAP_MAGIC = b"FVM1"
CHANNELS = ("height", "radial", "intensity")


class DegeneratePointError(ValueError):
    """Raised for points on the Z axis, where the azimuth is undefined."""


@dataclass(frozen=True)
class ProjectionConfig:
    theta_min: float = math.radians(-24.8)
    theta_max: float = math.radians(2.0)
    phi_min: float = math.radians(-45.0)
    phi_max: float = math.radians(45.0)
    base_height: int = 48
    base_width: int = 192
    upscaled_height: int = 128
    upscaled_width: int = 512
    max_range: float = 80.0
    fov_limit: Optional[float] = None
    # asin(y / rho) cannot tell front from back; rear returns are dropped
    front_only: bool = True

    def __post_init__(self):
        if not (self.theta_max > self.theta_min and self.phi_max > self.phi_min):
            raise ValueError("empty angular window")
        if self.base_height <= 0 or self.base_width <= 0:
            raise ValueError("map dimensions must be positive")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")

    @property
    def delta_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.base_height

    @property
    def delta_phi(self) -> float:
        return (self.phi_max - self.phi_min) / self.base_width

    @property
    def scale_rows(self) -> float:
        """Upscaled rows per base row."""
        return self.upscaled_height / self.base_height

    @property
    def scale_cols(self) -> float:
        return self.upscaled_width / self.base_width

    def to_dict(self) -> dict:
        return {
            "theta_min_deg": math.degrees(self.theta_min),
            "theta_max_deg": math.degrees(self.theta_max),
            "phi_min_deg": math.degrees(self.phi_min),
            "phi_max_deg": math.degrees(self.phi_max),
            "base_height": self.base_height,
            "base_width": self.base_width,
            "upscaled_height": self.upscaled_height,
            "upscaled_width": self.upscaled_width,
            "max_range": self.max_range,
            "fov_limit_deg": None if self.fov_limit is None else math.degrees(self.fov_limit),
            "front_only": self.front_only,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ProjectionConfig":
        kw = {}
        for key in ("theta_min", "theta_max", "phi_min", "phi_max"):
            if key + "_deg" in d:
                kw[key] = math.radians(d[key + "_deg"])
        for key in ("base_height", "base_width", "upscaled_height", "upscaled_width"):
            if key in d:
                kw[key] = int(d[key])
        if "max_range" in d:
            kw["max_range"] = float(d["max_range"])
        if d.get("fov_limit_deg") is not None:
            kw["fov_limit"] = math.radians(d["fov_limit_deg"])
        if "front_only" in d:
            kw["front_only"] = bool(d["front_only"])
        return cls(**kw)


class PixelCoord(NamedTuple):
    u: int
    v: int


@dataclass
class FrontViewMap:
    channels: np.ndarray  # (H, W, 3) float64
    occupied: np.ndarray  # (H, W) bool
    index: Optional[np.ndarray] = None  # (H, W) int64, -1 where empty
    skipped: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.channels.shape[0]

    @property
    def width(self) -> int:
        return self.channels.shape[1]

    @classmethod
    def empty(cls, h: int, w: int) -> "FrontViewMap":
        return cls(np.zeros((h, w, 3)), np.zeros((h, w), dtype=bool), np.full((h, w), -1, dtype=np.int64))


def angles_of_point(p: Point3) -> tuple[float, float]:
    rho = math.hypot(p.x, p.y)
    if rho == 0.0:
        raise DegeneratePointError(f"azimuth undefined for point on the Z axis: {p}")
    norm = math.sqrt(p.x * p.x + p.y * p.y + p.z * p.z)
    theta = math.asin(max(-1.0, min(1.0, p.z / norm)))
    phi = math.asin(max(-1.0, min(1.0, p.y / rho)))
    return theta, phi


def angles_of_points(xyz: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised angles. Returns ``(theta, phi, degenerate_mask)``; degenerate entries are NaN."""
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]
    rho = np.hypot(x, y)
    degenerate = rho == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.sqrt(x * x + y * y + z * z)
        theta = np.arcsin(np.clip(z / norm, -1.0, 1.0))
        phi = np.arcsin(np.clip(y / rho, -1.0, 1.0))
    theta[degenerate] = np.nan
    phi[degenerate] = np.nan
    return theta, phi, degenerate


def _in_window(u, v, phi, x, cfg: ProjectionConfig):
    ok = (u >= 0) & (u < cfg.base_height) & (v >= 0) & (v < cfg.base_width)
    if cfg.fov_limit is not None:
        ok &= np.abs(phi) <= cfg.fov_limit
    if cfg.front_only:
        ok &= x > 0
    return ok


def project_point(p: Point3, cfg: ProjectionConfig) -> Optional[PixelCoord]:
    """Cell of ``p`` on the base-resolution map, or ``None`` when outside the window."""
    theta, phi = angles_of_point(p)
    u = math.floor((theta - cfg.theta_min) / cfg.delta_theta)
    v = math.floor((phi - cfg.phi_min) / cfg.delta_phi)
    if not _in_window(np.array(u), np.array(v), np.array(phi), np.array(p.x), cfg):
        return None
    return PixelCoord(int(u), int(v))


class Projection(NamedTuple):
    """Per-point projection results, aligned with the cloud's rows."""

    u: np.ndarray  # int64, -1 where invalid
    v: np.ndarray
    radial: np.ndarray
    valid: np.ndarray  # in window and non-degenerate
    degenerate: np.ndarray


def project_points(xyz: np.ndarray, cfg: ProjectionConfig) -> Projection:
    theta, phi, degenerate = angles_of_points(xyz)
    with np.errstate(invalid="ignore"):
        uf = np.floor((theta - cfg.theta_min) / cfg.delta_theta)
        vf = np.floor((phi - cfg.phi_min) / cfg.delta_phi)
        valid = ~degenerate & _in_window(uf, vf, phi, xyz[:, 0], cfg)
    u = np.where(valid, uf, -1).astype(np.int64)
    v = np.where(valid, vf, -1).astype(np.int64)
    radial = np.hypot(xyz[:, 0], xyz[:, 1])
    return Projection(u, v, radial, valid, degenerate)


def _nearest_per_cell(cell: np.ndarray, radial: np.ndarray, index: np.ndarray):
    """Winner of each cell: smallest radial, ties to the lowest point index.

    Entries sharing a cell must appear in increasing ``index`` order; a
    stable sort by cell then keeps that order inside every segment.
    """
    if cell.size == 0:
        return cell, radial, index
    key = cell.astype(np.uint16) if cell.max() < 2 ** 16 else cell  # small ints take the radix path
    order = np.argsort(key, kind="stable")
    cs, rs = cell[order], radial[order]
    starts = np.flatnonzero(np.r_[True, cs[1:] != cs[:-1]])
    seg = np.repeat(np.arange(starts.size), np.diff(np.r_[starts, cs.size]))
    hit = np.flatnonzero(rs == np.minimum.reduceat(rs, starts)[seg])
    first = hit[np.r_[True, seg[hit[1:]] != seg[hit[:-1]]]]
    win = order[first]
    return cell[win], radial[win], index[win]


def build_front_view_map(
    cloud: PointCloud,
    cfg: ProjectionConfig,
    workers: int = 1,
    projection: Optional[Projection] = None,
) -> FrontViewMap:
    """Project ``cloud`` onto a ``base_height x base_width`` front-view map.

    With ``workers > 1`` the cloud is split into contiguous chunks whose
    per-cell winners are merged with the same (radial, index) ordering, so
    the result does not depend on the worker count.
    """
    pts = cloud.points
    H, W = cfg.base_height, cfg.base_width
    fv = FrontViewMap.empty(H, W)
    if len(pts) == 0:
        return fv
    proj = projection if projection is not None else project_points(pts[:, :3], cfg)
    idx = np.flatnonzero(proj.valid)
    cell = proj.u[idx] * W + proj.v[idx]
    radial = proj.radial[idx]

    if workers > 1 and idx.size > 1:
        bounds = np.linspace(0, idx.size, workers + 1).astype(int)
        chunks = [(cell[a:b], radial[a:b], idx[a:b]) for a, b in zip(bounds[:-1], bounds[1:])]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: _nearest_per_cell(*c), chunks))
        cell = np.concatenate([p[0] for p in parts])
        radial = np.concatenate([p[1] for p in parts])
        idx = np.concatenate([p[2] for p in parts])

    wcell, _, widx = _nearest_per_cell(cell, radial, idx)
    flat_ch = fv.channels.reshape(-1, 3)
    flat_ch[wcell, 0] = pts[widx, 2]
    # winners only: a correctly rounded planar distance, which np.hypot does not guarantee
    flat_ch[wcell, 1] = np.fromiter(map(math.hypot, pts[widx, 0], pts[widx, 1]), np.float64, widx.size)
    flat_ch[wcell, 2] = pts[widx, 3]
    fv.occupied.reshape(-1)[wcell] = True
    fv.index.reshape(-1)[wcell] = widx
    fv.skipped = int(proj.degenerate.sum())
    fv.stats = {
        "points": int(len(pts)),
        "degenerate": fv.skipped,
        "in_window": int(proj.valid.sum()),
        "occupied_cells": int(wcell.size),
    }
    return fv


def upscale_nearest(fv: FrontViewMap, target_h: int, target_w: int) -> FrontViewMap:
    H, W = fv.height, fv.width
    if target_h < H or target_w < W:
        raise ValueError("target dimensions must not be smaller than the source")
    rows = (np.arange(target_h) * H) // target_h
    cols = (np.arange(target_w) * W) // target_w
    ch = fv.channels[rows[:, None], cols[None, :]]
    occ = fv.occupied[rows[:, None], cols[None, :]]
    index = None if fv.index is None else fv.index[rows[:, None], cols[None, :]]
    return FrontViewMap(ch, occ, index, fv.skipped, dict(fv.stats))


def map_to_input(fv: FrontViewMap, cfg: ProjectionConfig) -> np.ndarray:
    """Scale the channels to roughly unit range for the proposal network."""
    x = np.empty_like(fv.channels)
    x[..., 0] = fv.channels[..., 0] / 2.0
    x[..., 1] = fv.channels[..., 1] / cfg.max_range
    x[..., 2] = fv.channels[..., 2]
    return x


def render_map(fv: FrontViewMap) -> np.ndarray:
    """RGB ``uint8`` image; each channel min-max normalised over occupied cells.

    Row 0 of the image is the highest elevation, so the picture is upright.
    A channel with zero range over the occupied cells renders at 255.
    """
    img = np.zeros((fv.height, fv.width, 3), dtype=np.uint8)
    occ = fv.occupied
    if occ.any():
        vals = fv.channels[occ]
        lo = vals.min(axis=0)
        hi = vals.max(axis=0)
        span = hi - lo
        norm = np.where(span > 0, (vals - lo) / np.where(span > 0, span, 1.0), 1.0)
        img[occ] = np.rint(norm * 255.0).astype(np.uint8)
    return img[::-1]


def write_ppm(path, img: np.ndarray) -> None:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(np.ascontiguousarray(img).tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise ValueError("not a binary PPM (P6) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError("only 8-bit PPM supported")
    body = data[pos:pos + w * h * 3]
    if len(body) != w * h * 3:
        raise ValueError("truncated PPM")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).copy()


def save_map(path, fv: FrontViewMap) -> None:
    """Write channels plus an occupancy channel as little-endian float32.

    Header: 4-byte magic, then H, W, C as little-endian uint32.
    """
    data = np.concatenate([fv.channels, fv.occupied[..., None].astype(np.float64)], axis=-1)
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(MAP_MAGIC + struct.pack("<III", h, w, c))
        f.write(data.astype("<f4").tobytes())


def load_map(path) -> FrontViewMap:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 16 or raw[:4] != MAP_MAGIC:
        raise ValueError(f"{path}: not a front-view map file")
    h, w, c = struct.unpack("<III", raw[4:16])
    expected = 16 + 4 * h * w * c
    if len(raw) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, found {len(raw)}")
    data = np.frombuffer(raw[16:], dtype="<f4").reshape(h, w, c).astype(np.float64)
    if c == 4:
        occ = data[..., 3] > 0.5
    elif c == 3:
        occ = np.any(data != 0, axis=-1)
    else:
        raise ValueError(f"{path}: unsupported channel count {c}")
    return FrontViewMap(np.ascontiguousarray(data[..., :3]), occ, None)


def _nearest_point_on_rect(corners_xy: np.ndarray) -> np.ndarray:
    """Closest point of a convex CCW quad to the origin (origin itself if inside)."""
    inside = True
    best, best_d = None, np.inf
    for i in range(4):
        a = corners_xy[i]
        b = corners_xy[(i + 1) % 4]
        e = b - a
        if e[0] * (-a[1]) - e[1] * (-a[0]) < 0:
            inside = False
        t = np.clip(-(a @ e) / (e @ e), 0.0, 1.0)
        q = a + t * e
        d = q @ q
        if d < best_d:
            best, best_d = q, d
    return np.zeros(2) if inside else best


def box_to_map_rect(box, cfg: ProjectionConfig) -> tuple[float, float, float, float, float, float]:
    """Map footprint and radial extent of a 3D box.

    Returns ``(x0, y0, x1, y1, r_min, r_max)``: the rectangle spanned by the
    box on the upscaled map in continuous pixel coordinates (x along
    columns/azimuth, y along rows/elevation) and the planar radial range of
    its footprint.
    """
    from .core import corners_array

    corners = corners_array(box)
    fp = corners[:4, :2]
    near = _nearest_point_on_rect(fp)
    r_min = float(np.hypot(*near))
    r_max = float(np.max(np.hypot(fp[:, 0], fp[:, 1])))
    z_lo, z_hi = box.cz - box.h / 2, box.cz + box.h / 2
    # elevation is monotone in rho at fixed z, so the extremes sit at the nearest or farthest footprint point
    pts = [corners]
    if r_min > 0:
        pts.append(np.array([[near[0], near[1], z_lo], [near[0], near[1], z_hi]]))
    xyz = np.concatenate(pts)
    theta, phi, deg = angles_of_points(xyz)
    theta, phi = theta[~deg], phi[~deg]
    x0 = (phi.min() - cfg.phi_min) / cfg.delta_phi * cfg.scale_cols
    x1 = (phi.max() - cfg.phi_min) / cfg.delta_phi * cfg.scale_cols
    y0 = (theta.min() - cfg.theta_min) / cfg.delta_theta * cfg.scale_rows
    y1 = (theta.max() - cfg.theta_min) / cfg.delta_theta * cfg.scale_rows
    return float(x0), float(y0), float(x1), float(y1), r_min, r_max
