"""Rotated-box overlaps and KITTI-style average precision."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import Box3D, ClassId, bev_corners
from .fvproj import ProjectionConfig, box_to_map_rect
from .proposal import iou_2d_axis_aligned

AREA_EPS = 1e-12
IOU_KINDS = ("bev", "3d", "2d-map")
DEFAULT_IOU = {ClassId.CAR: 0.7, ClassId.PEDESTRIAN: 0.5, ClassId.CYCLIST: 0.5, ClassId.PERSON: 0.5}


@dataclass(frozen=True)
class DifficultySpec:
    name: str
    min_height: float
    max_occlusion: int
    max_truncation: float


# KITTI benchmark thresholds; heights are image pixels
DIFFICULTIES = {
    "easy": DifficultySpec("easy", 40.0, 0, 0.15),
    "moderate": DifficultySpec("moderate", 25.0, 1, 0.30),
    "hard": DifficultySpec("hard", 25.0, 2, 0.50),
}


@dataclass
class Detection:
    box: Box3D
    cls: ClassId
    score: float
    sample: str = "0"


@dataclass
class GroundTruth:
    box: Box3D
    cls: ClassId
    sample: str = "0"
    height_px: float = 1e9
    occlusion: int = 0
    truncation: float = 0.0
    dont_care: bool = False

    def in_bucket(self, spec: DifficultySpec, height_scale: float = 1.0) -> bool:
        return (self.height_px * height_scale >= spec.min_height and self.occlusion <= spec.max_occlusion
                and self.truncation <= spec.max_truncation)


@dataclass
class PRCurve:
    recall: list = field(default_factory=list)
    precision: list = field(default_factory=list)
    ap: Optional[float] = None
    n_gt: int = 0

    def pairs(self):
        return list(zip(self.recall, self.precision))


# ---------------------------------------------------------------- polygon ops


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the convex CCW polygon ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not out:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    poly = clip_convex(bev_corners(a), bev_corners(b))
    area = polygon_area(poly)
    return area if area > AREA_EPS else 0.0


def iou_bev(a: Box3D, b: Box3D) -> float:
    inter = bev_intersection_area(a, b)
    union = a.w * a.l + b.w * b.l - inter
    return min(max(inter / union, 0.0), 1.0) if union > 0 else 0.0


def iou_3d(a: Box3D, b: Box3D) -> float:
    zlo = max(a.cz - a.h / 2, b.cz - b.h / 2)
    zhi = min(a.cz + a.h / 2, b.cz + b.h / 2)
    dz = max(0.0, zhi - zlo)
    if dz == 0.0:
        return 0.0
    inter = bev_intersection_area(a, b) * dz
    union = a.volume() + b.volume() - inter
    return min(max(inter / union, 0.0), 1.0) if union > 0 else 0.0


def iou_map(a: Box3D, b: Box3D, cfg: ProjectionConfig = ProjectionConfig()) -> float:
    """IoU of the two boxes' rectangles on the front-view map."""
    ra = box_to_map_rect(a, cfg)
    rb = box_to_map_rect(b, cfg)
    to_cwh = lambda r: ((r[0] + r[2]) / 2, (r[1] + r[3]) / 2, r[2] - r[0], r[3] - r[1])
    return iou_2d_axis_aligned(to_cwh(ra), to_cwh(rb))


def iou_of_kind(kind: str):
    if kind == "bev":
        return iou_bev
    if kind == "3d":
        return iou_3d
    if kind == "2d-map":
        return iou_map
    raise ValueError(f"unknown IoU kind {kind!r}; expected one of {IOU_KINDS}")


# ---------------------------------------------------------------------- AP


def recall_points(n_points: int = 11) -> np.ndarray:
    if n_points == 11:
        return np.linspace(0.0, 1.0, 11)
    if n_points == 40:
        return np.linspace(1.0 / 40, 1.0, 40)
    raise ValueError("only 11- and 40-point interpolation are supported")


def ap_11point(recall: Sequence[float], precision: Sequence[float], n_points: int = 11) -> float:
    """Mean over sampled recall levels of the best precision at or beyond each level."""
    r = np.asarray(recall, dtype=np.float64)
    p = np.asarray(precision, dtype=np.float64)
    total = 0.0
    for level in recall_points(n_points):
        mask = r >= level - 1e-12
        total += float(p[mask].max()) if mask.any() else 0.0
    return total / n_points


def pr_from_flags(scores: Sequence[float], is_tp: Sequence[bool], n_gt: int):
    """Precision/recall after each detection, ranked by descending score (stable)."""
    scores = np.asarray(scores, dtype=np.float64)
    tp = np.asarray(is_tp, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    tp = tp[order]
    ctp = np.cumsum(tp)
    cfp = np.cumsum(~tp)
    recall = ctp / n_gt if n_gt else np.zeros(len(tp))
    precision = ctp / np.maximum(ctp + cfp, 1)
    return recall.tolist(), precision.tolist()


def match_sample(dets: Sequence[Detection], gts: Sequence[GroundTruth], valid: Sequence[bool],
                 iou_fn, threshold: float) -> list[Optional[bool]]:
    """Greedy matching by descending score within one sample.

    Returns per detection (in input order) True (TP), False (FP) or None
    (matched a don't-care ground truth, so it is neither).
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    used = [False] * len(gts)
    out: list[Optional[bool]] = [False] * len(dets)
    for i in order:
        best, best_iou = -1, threshold
        ignored = False
        for j, g in enumerate(gts):
            if used[j]:
                continue
            iou = iou_fn(dets[i].box, g.box)
            if iou < threshold:
                continue
            if valid[j]:
                if best < 0 or iou > best_iou:
                    best, best_iou = j, iou
            else:
                ignored = True
        if best >= 0:
            used[best] = True
            out[i] = True
        elif ignored:
            out[i] = None
    return out


def evaluate(dets: Sequence[Detection], gts: Sequence[GroundTruth], cls: ClassId, bucket: str = "moderate",
             iou_kind: str = "bev", iou_threshold: Optional[float] = None, n_points: int = 11,
             height_scale: float = 1.0) -> PRCurve:
    """Precision/recall and AP for one class, difficulty bucket and overlap kind.

    Ground truths of ``cls`` outside the bucket, and those flagged
    don't-care, absorb matching detections without counting them.
    """
    spec = DIFFICULTIES[bucket]
    thr = DEFAULT_IOU[cls] if iou_threshold is None else iou_threshold
    iou_fn = iou_of_kind(iou_kind)
    samples = sorted({d.sample for d in dets} | {g.sample for g in gts})
    scores, flags = [], []
    n_gt = 0
    for sid in samples:
        sd = [d for d in dets if d.sample == sid and cls.matches(d.cls)]
        sg = [g for g in gts if g.sample == sid and (g.dont_care or cls.matches(g.cls))]
        valid = [not g.dont_care and g.in_bucket(spec, height_scale) for g in sg]
        n_gt += sum(valid)
        for d, f in zip(sd, match_sample(sd, sg, valid, iou_fn, thr)):
            if f is not None:
                scores.append(d.score)
                flags.append(f)
    if n_gt == 0:
        return PRCurve([], [], None, 0)
    recall, precision = pr_from_flags(scores, flags, n_gt)
    return PRCurve(recall, precision, ap_11point(recall, precision, n_points), n_gt)


def evaluate_all(dets, gts, classes=(ClassId.CAR, ClassId.PERSON), buckets=("easy", "moderate", "hard"),
                 kinds=IOU_KINDS, iou_thresholds: Optional[dict] = None, n_points: int = 11,
                 height_scale: float = 1.0) -> dict:
    report: dict = {}
    for c in classes:
        thr = (iou_thresholds or {}).get(c.value)
        for b in buckets:
            for k in kinds:
                curve = evaluate(dets, gts, c, b, k, thr, n_points, height_scale)
                report.setdefault(c.value, {}).setdefault(b, {})[k] = {
                    "ap": curve.ap,
                    "n_gt": curve.n_gt,
                    "iou_threshold": DEFAULT_IOU[c] if thr is None else thr,
                    "pr": [[r, p] for r, p in curve.pairs()],
                }
    return report


def report_to_json(report: dict, path) -> None:
    with open(path, "w") as f:
        json.dump(report, f, indent=1)


def report_table(report: dict, kind: str = "3d") -> str:
    """Plain-text AP table (percent) with easy/moderate/hard columns per class."""
    classes = list(report)
    head = "Method".ljust(10) + "".join(f"| {c:^26} " for c in classes)
    sub = " " * 10 + "".join("| {:>7} {:>8} {:>8} ".format("Easy", "Mod.", "Hard") for _ in classes)
    row = "Detector".ljust(10)
    for c in classes:
        cells = []
        for b in ("easy", "moderate", "hard"):
            ap = report[c].get(b, {}).get(kind, {}).get("ap")
            cells.append("-" if ap is None else f"{100 * ap:.2f}")
        row += "| {:>7} {:>8} {:>8} ".format(*cells)
    return "\n".join([f"AP ({kind})", head, sub, row]) + "\n"
