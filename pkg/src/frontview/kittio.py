"""KITTI file formats, synthetic scenes and bird's-eye-view rendering."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import Box3D, ClassId, PointCloud, corners_array, normalize_angle, points_in_box
from .evaluation import Detection, GroundTruth, iou_bev
from .fvproj import ProjectionConfig, box_to_map_rect, write_ppm

RECORD_BYTES = 16
KNOWN_TYPES = {"Car": ClassId.CAR, "Pedestrian": ClassId.PEDESTRIAN, "Cyclist": ClassId.CYCLIST}
# neighbouring KITTI categories; detections landing on them are not penalised
NEIGHBOUR_TYPES = ("Van", "Person_sitting", "DontCare")


class LabelFormatError(ValueError):
    pass


class SceneGenerationError(RuntimeError):
    pass


# ------------------------------------------------------------------ velodyne


def read_velodyne(path) -> PointCloud:
    raw = Path(path).read_bytes()
    if len(raw) % RECORD_BYTES:
        raise ValueError(f"{path}: size {len(raw)} is not a multiple of {RECORD_BYTES} bytes")
    arr = np.frombuffer(raw, dtype="<f4").reshape(-1, 4).astype(np.float64)
    return PointCloud(arr)


def write_velodyne(path, cloud: PointCloud) -> None:
    Path(path).write_bytes(np.ascontiguousarray(cloud.points, dtype="<f4").tobytes())


# -------------------------------------------------------------------- labels


@dataclass(frozen=True)
class Calibration:
    """Sensor -> camera rigid transform ``cam = R @ p + t`` given as a 3x4 matrix."""

    matrix: np.ndarray = field(default_factory=lambda: np.hstack([np.eye(3), np.zeros((3, 1))]))

    @property
    def identity(self) -> bool:
        return bool(np.array_equal(self.matrix, np.hstack([np.eye(3), np.zeros((3, 1))])))

    def cam_to_sensor(self, p: np.ndarray) -> np.ndarray:
        R, t = self.matrix[:, :3], self.matrix[:, 3]
        return R.T @ (np.asarray(p, dtype=np.float64) - t)

    def sensor_to_cam(self, p: np.ndarray) -> np.ndarray:
        R, t = self.matrix[:, :3], self.matrix[:, 3]
        return R @ np.asarray(p, dtype=np.float64) + t

    @classmethod
    def read(cls, path) -> "Calibration":
        """Reads ``Tr_velo_to_cam`` (and ``R0_rect`` when present) from a KITTI calib file."""
        rows = {}
        for line in Path(path).read_text().splitlines():
            if ":" in line:
                k, v = line.split(":", 1)
                rows[k.strip()] = np.array(v.split(), dtype=np.float64)
        if "Tr_velo_to_cam" not in rows:
            raise ValueError(f"{path}: no Tr_velo_to_cam entry")
        T = np.vstack([rows["Tr_velo_to_cam"].reshape(3, 4), [0, 0, 0, 1]])
        if "R0_rect" in rows:
            R0 = np.eye(4)
            R0[:3, :3] = rows["R0_rect"].reshape(3, 3)
            T = R0 @ T
        return cls(T[:3])


IDENTITY = Calibration()


@dataclass
class KittiLabel:
    type: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: tuple  # left, top, right, bottom
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: Optional[float] = None

    @property
    def dont_care(self) -> bool:
        return self.type == "DontCare"

    @property
    def has_box(self) -> bool:
        return self.h > 0 and self.w > 0 and self.l > 0

    def to_box(self, calib: Calibration = IDENTITY) -> Box3D:
        """Sensor-frame box.

        With the identity calibration the location is the bottom centre in
        the sensor frame and ``rotation_y`` is the heading. Otherwise KITTI
        camera conventions apply (Y down, yaw about -Y).
        """
        if calib.identity:
            return Box3D(self.x, self.y, self.z + self.h / 2, self.h, self.w, self.l, self.rotation_y)
        c = calib.cam_to_sensor([self.x, self.y - self.h / 2, self.z])
        return Box3D(c[0], c[1], c[2], self.h, self.w, self.l, normalize_angle(-self.rotation_y - math.pi / 2))

    @classmethod
    def from_box(cls, kind: str, box: Box3D, bbox, calib: Calibration = IDENTITY, score=None,
                 truncation: float = 0.0, occlusion: int = 0) -> "KittiLabel":
        if calib.identity:
            loc = (box.cx, box.cy, box.cz - box.h / 2)
            ry = box.heading
        else:
            c = calib.sensor_to_cam(box.center)
            loc = (c[0], c[1] + box.h / 2, c[2])
            ry = -box.heading - math.pi / 2
            ry = (ry + math.pi) % (2 * math.pi) - math.pi
        return cls(kind, truncation, occlusion, -10.0, tuple(bbox), box.h, box.w, box.l, *loc, ry, score)

    def to_line(self) -> str:
        vals = [self.truncation, self.occlusion, self.alpha, *self.bbox, self.h, self.w, self.l,
                self.x, self.y, self.z, self.rotation_y]
        parts = [self.type, f"{vals[0]:.6f}", str(int(vals[1]))] + [f"{v:.6f}" for v in vals[2:]]
        if self.score is not None:
            parts.append(f"{self.score:.6f}")
        return " ".join(parts)


def parse_label_line(line: str, lineno: int = 0) -> KittiLabel:
    f = line.split()
    if len(f) not in (15, 16):
        raise LabelFormatError(f"line {lineno}: expected 15 or 16 fields, got {len(f)}")
    try:
        nums = [float(v) for v in f[1:]]
        return KittiLabel(f[0], nums[0], int(nums[1]), nums[2], tuple(nums[3:7]), nums[7], nums[8], nums[9],
                          nums[10], nums[11], nums[12], nums[13], nums[14] if len(f) == 16 else None)
    except ValueError as e:
        raise LabelFormatError(f"line {lineno}: {e}") from None


def read_labels(path) -> list[KittiLabel]:
    out = []
    for i, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            out.append(parse_label_line(line, i))
    return out


def write_labels(path, labels: Sequence[KittiLabel]) -> None:
    Path(path).write_text("".join(lab.to_line() + "\n" for lab in labels))


def labels_to_ground_truth(labels: Sequence[KittiLabel], sample: str = "0",
                           calib: Calibration = IDENTITY) -> list[GroundTruth]:
    """Known classes become ground truths; neighbouring categories become don't-care boxes."""
    out = []
    for lab in labels:
        if lab.type in KNOWN_TYPES:
            cls, dc = KNOWN_TYPES[lab.type], False
        elif lab.type in NEIGHBOUR_TYPES:
            cls, dc = ClassId.CAR if lab.type in ("Van", "DontCare") else ClassId.PEDESTRIAN, True
        else:
            continue
        if not lab.has_box:
            continue
        out.append(GroundTruth(lab.to_box(calib), cls, sample, height_px=lab.bbox[3] - lab.bbox[1],
                               occlusion=lab.occlusion, truncation=lab.truncation, dont_care=dc))
    return out


def map_bbox(box: Box3D, cfg: ProjectionConfig) -> tuple:
    x0, y0, x1, y1, _, _ = box_to_map_rect(box, cfg)
    return x0, y0, x1, y1


def ground_truth_to_labels(gts: Sequence[GroundTruth], cfg: ProjectionConfig = ProjectionConfig(),
                           calib: Calibration = IDENTITY) -> list[KittiLabel]:
    """Label lines whose 2D box is the front-view-map rectangle."""
    return [KittiLabel.from_box("DontCare" if g.dont_care else g.cls.value, g.box, map_bbox(g.box, cfg), calib,
                                truncation=g.truncation, occlusion=g.occlusion) for g in gts]


def write_detections(path, dets: Sequence[Detection], cfg: ProjectionConfig = ProjectionConfig(),
                     calib: Calibration = IDENTITY) -> None:
    write_labels(path, [KittiLabel.from_box(d.cls.value, d.box, map_bbox(d.box, cfg), calib, score=d.score,
                                            truncation=-1.0, occlusion=-1) for d in dets])


def read_detections(path, sample: str = "0", calib: Calibration = IDENTITY) -> list[Detection]:
    out = []
    for lab in read_labels(path):
        if lab.type not in KNOWN_TYPES and lab.type != "Person":
            continue
        score = 1.0 if lab.score is None else lab.score
        out.append(Detection(lab.to_box(calib), ClassId.parse(lab.type), score, sample))
    return out


# ----------------------------------------------------------- synthetic data


@dataclass
class SizeDistribution:
    h: float
    w: float
    l: float
    jitter: float = 0.08  # relative, uniform

    def draw(self, rng: np.random.Generator) -> tuple[float, float, float]:
        s = rng.uniform(1 - self.jitter, 1 + self.jitter, size=3)
        return self.h * s[0], self.w * s[1], self.l * s[2]


DEFAULT_SIZES = {
    "Car": SizeDistribution(1.52, 1.63, 3.88),
    "Pedestrian": SizeDistribution(1.76, 0.66, 0.84),
    "Cyclist": SizeDistribution(1.74, 0.60, 1.76),
}
# surface points at 1 m; counts fall off as 1/d^2
DEFAULT_DENSITY = {"Car": 100000.0, "Pedestrian": 40000.0, "Cyclist": 40000.0}


@dataclass
class SceneSpec:
    counts: dict = field(default_factory=lambda: {"Car": 3, "Pedestrian": 2, "Cyclist": 1})
    radial_range: tuple = (5.0, 60.0)
    azimuth_deg: float = 38.0  # objects are placed with |azimuth| below this
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    density: dict = field(default_factory=lambda: dict(DEFAULT_DENSITY))
    min_points: int = 10
    clutter_points: int = 2000
    sensor_height: float = 1.73
    seed: int = 0
    max_retries: int = 1000
    # explicit placements: dicts with class, x, y and optional heading, h, w, l
    objects: list = field(default_factory=list)
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts), "radial_range": list(self.radial_range), "azimuth_deg": self.azimuth_deg,
            "sizes": {k: [v.h, v.w, v.l, v.jitter] for k, v in self.sizes.items()},
            "density": dict(self.density), "min_points": self.min_points, "clutter_points": self.clutter_points,
            "sensor_height": self.sensor_height, "seed": self.seed, "max_retries": self.max_retries,
            "objects": list(self.objects),
        }

    @classmethod
    def from_dict(cls, d: dict, projection: Optional[ProjectionConfig] = None) -> "SceneSpec":
        kw = {k: d[k] for k in ("counts", "azimuth_deg", "min_points", "clutter_points", "sensor_height", "seed",
                                "max_retries", "objects") if k in d}
        if "radial_range" in d:
            kw["radial_range"] = tuple(d["radial_range"])
        if "sizes" in d:
            sizes = dict(DEFAULT_SIZES)
            sizes.update({k: SizeDistribution(*v) for k, v in d["sizes"].items()})
            kw["sizes"] = sizes
        if "density" in d:
            dens = dict(DEFAULT_DENSITY)
            dens.update(d["density"])
            kw["density"] = dens
        if projection is not None:
            kw["projection"] = projection
        return cls(**kw)


def sample_box_surface(box: Box3D, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniformly distributed over the six faces of ``box`` (sensor frame)."""
    half = np.array([box.l, box.w, box.h]) / 2
    areas = np.array([box.w * box.h, box.w * box.h, box.l * box.h, box.l * box.h, box.l * box.w, box.l * box.w])
    face = rng.choice(6, size=n, p=areas / areas.sum())
    local = rng.uniform(-1.0, 1.0, size=(n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    local[np.arange(n), axis] = sign * half[axis]
    c, s = math.cos(box.heading), math.sin(box.heading)
    x = c * local[:, 0] - s * local[:, 1] + box.cx
    y = s * local[:, 0] + c * local[:, 1] + box.cy
    return np.column_stack([x, y, local[:, 2] + box.cz])


def _fits_window(box: Box3D, cfg: ProjectionConfig) -> bool:
    x0, y0, x1, y1, rmin, rmax = box_to_map_rect(box, cfg)
    return (x0 >= 0 and y0 >= 0 and x1 <= cfg.upscaled_width and y1 <= cfg.upscaled_height
            and rmin > 0.5 and rmax < cfg.max_range)


def _inflated(box: Box3D, margin: float) -> Box3D:
    return Box3D(box.cx, box.cy, box.cz, box.h, box.w + 2 * margin, box.l + 2 * margin, box.heading)


def gen_synthetic_scene(spec: SceneSpec) -> tuple[PointCloud, list[GroundTruth]]:
    """Boxes placed without BEV overlap inside the projection window, points on their surfaces plus ground clutter."""
    rng = np.random.default_rng(spec.seed)
    cfg = spec.projection
    ground = -spec.sensor_height
    boxes: list[Box3D] = []
    classes: list[ClassId] = []

    def accept(box):
        if not _fits_window(box, cfg):
            return False
        grown = _inflated(box, 0.3)
        return all(iou_bev(grown, _inflated(b, 0.3)) == 0.0 for b in boxes)

    for obj in spec.objects:
        name = obj["class"]
        h, w, l = (obj[k] if k in obj else v for k, v in zip("hwl", spec.sizes[name].draw(rng)))
        box = Box3D(obj["x"], obj["y"], ground + h / 2, h, w, l, obj.get("heading", 0.0))
        if not accept(box):
            raise SceneGenerationError(f"explicit object {obj} overlaps another or leaves the window")
        boxes.append(box)
        classes.append(ClassId.parse(name))

    az = math.radians(spec.azimuth_deg)
    for name in sorted(spec.counts):
        for _ in range(int(spec.counts[name])):
            for _attempt in range(spec.max_retries):
                r = rng.uniform(*spec.radial_range)
                phi = rng.uniform(-az, az)
                heading = rng.uniform(0.0, 2 * math.pi)
                h, w, l = spec.sizes[name].draw(rng)
                box = Box3D(r * math.cos(phi), r * math.sin(phi), ground + h / 2, h, w, l, heading)
                if accept(box):
                    break
            else:
                raise SceneGenerationError(f"could not place a {name} after {spec.max_retries} attempts")
            boxes.append(box)
            classes.append(ClassId.parse(name))

    parts = []
    for box, cls in zip(boxes, classes):
        d = math.hypot(box.cx, box.cy)
        n = max(spec.min_points, int(round(spec.density[cls.value] / (d * d))))
        xyz = sample_box_surface(box, n, rng)
        base = rng.uniform(0.2, 0.9)
        inten = np.clip(base + rng.normal(0.0, 0.05, size=n), 0.0, 1.0)
        parts.append(np.column_stack([xyz, inten]))

    if spec.clutter_points > 0:
        m = spec.clutter_points
        r = rng.uniform(2.0, cfg.max_range, size=m)
        phi = rng.uniform(cfg.phi_min, cfg.phi_max, size=m)
        xyz = np.column_stack([r * np.cos(phi), r * np.sin(phi), ground + rng.normal(0.0, 0.02, size=m)])
        inten = rng.uniform(0.0, 0.3, size=m)
        keep = np.ones(m, dtype=bool)
        for box in boxes:
            keep &= ~points_in_box(xyz, _inflated(Box3D(box.cx, box.cy, box.cz, box.h + 0.2, box.w, box.l,
                                                        box.heading), 0.2))
        parts.append(np.column_stack([xyz, inten])[keep])

    pts = np.concatenate(parts) if parts else np.zeros((0, 4))
    gts = []
    for box, cls in zip(boxes, classes):
        x0, y0, x1, y1 = map_bbox(box, cfg)
        gts.append(GroundTruth(box, cls, str(spec.seed), height_px=y1 - y0))
    return PointCloud(pts), gts


# -------------------------------------------------------------- BEV raster


def bev_pixel(x, y, meters_per_pixel: float, x_range: tuple, y_range: tuple):
    """Row/column of a sensor-frame XY position; forward (+X) points up, left (+Y) points left."""
    H = int(math.ceil((x_range[1] - x_range[0]) / meters_per_pixel))
    W = int(math.ceil((y_range[1] - y_range[0]) / meters_per_pixel))
    row = H - 1 - np.floor((np.asarray(x) - x_range[0]) / meters_per_pixel).astype(np.int64)
    col = W - 1 - np.floor((np.asarray(y) - y_range[0]) / meters_per_pixel).astype(np.int64)
    return row, col, H, W


def raster_line(r0: int, c0: int, r1: int, c1: int) -> list[tuple[int, int]]:
    """Bresenham line including both end points."""
    out = []
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r1 >= r0 else -1
    sc = 1 if c1 >= c0 else -1
    err = dc - dr
    r, c = r0, c0
    while True:
        out.append((r, c))
        if r == r1 and c == c1:
            break
        e2 = 2 * err
        if e2 > -dr:
            err -= dr
            c += sc
        if e2 < dc:
            err += dc
            r += sr
    return out


def render_bev(cloud: PointCloud, boxes: Sequence[Box3D], path=None, meters_per_pixel: float = 0.1,
               x_range: tuple = (0.0, 70.0), y_range: tuple = (-40.0, 40.0),
               point_color=(255, 255, 255), box_color=(255, 0, 0)) -> np.ndarray:
    """Orthographic top-down raster with box outlines; written as PPM when ``path`` is given."""
    _, _, H, W = bev_pixel(0.0, 0.0, meters_per_pixel, x_range, y_range)
    img = np.zeros((H, W, 3), dtype=np.uint8)
    if len(cloud):
        r, c, _, _ = bev_pixel(cloud.points[:, 0], cloud.points[:, 1], meters_per_pixel, x_range, y_range)
        ok = (r >= 0) & (r < H) & (c >= 0) & (c < W)
        img[r[ok], c[ok]] = point_color
    for box in boxes:
        fp = corners_array(box)[:4, :2]
        r, c, _, _ = bev_pixel(fp[:, 0], fp[:, 1], meters_per_pixel, x_range, y_range)
        for i in range(4):
            j = (i + 1) % 4
            for pr, pc in raster_line(int(r[i]), int(c[i]), int(r[j]), int(c[j])):
                if 0 <= pr < H and 0 <= pc < W:
                    img[pr, pc] = box_color
    if path is not None:
        write_ppm(path, img)
    return img
