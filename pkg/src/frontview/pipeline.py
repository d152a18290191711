"""Glue between the stages: training samples, loss wrappers, detection and timing."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import Box3D, ClassId, PointCloud, points_in_box
from .evaluation import Detection, GroundTruth, iou_map
from .frustum import (CylinderFragment, augment, box_from_canonical, box_to_canonical, extrude_points,
                      normalize_centroid, perturb_box, sample_points, to_canonical)
from .fvproj import Projection, ProjectionConfig, box_to_map_rect, build_front_view_map, map_to_input, \
    project_points, upscale_nearest
from .nnet.penet import PENet, decode_output, encode_targets, stage2_loss
from .nnet.pgnet import PGNet
from .proposal import (AnchorPrior, DecodedHeads, GridSpec, LossWeights, Proposal3D, assign_targets,
                       decode_heads, nms_indices, stage1_loss)


# ------------------------------------------------------------------ scenes


@dataclass
class Scene:
    sample: str
    cloud: PointCloud
    gts: list  # GroundTruth


def scene_input(cloud: PointCloud, cfg: ProjectionConfig, projection: Optional[Projection] = None):
    """Network input ``(H, W, 3)`` at the upscaled resolution, plus the projection used."""
    proj = projection if projection is not None else project_points(cloud.points[:, :3], cfg)
    fv = build_front_view_map(cloud, cfg, projection=proj)
    up = upscale_nearest(fv, cfg.upscaled_height, cfg.upscaled_width)
    return map_to_input(up, cfg), proj


def stage1_index(cls: ClassId) -> int:
    return 0 if cls.stage1() is ClassId.CAR else 1


def gt_map_boxes(gts: Sequence[GroundTruth], cfg: ProjectionConfig) -> list[Proposal3D]:
    """Stage-1 targets in pixels: map rectangle, radial extent and merged class index."""
    out = []
    for g in gts:
        if g.dont_care:
            continue
        x0, y0, x1, y1, rmin, rmax = box_to_map_rect(g.box, cfg)
        out.append(Proposal3D((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0, rmin, rmax, 1.0, (), 1,
                              stage1_index(g.cls)))
    return out


def grids_for(strides, cfg: ProjectionConfig) -> list[GridSpec]:
    return [GridSpec.for_map(s, cfg.upscaled_height, cfg.upscaled_width) for s in strides]


# ------------------------------------------------------------------ stage 1


class PGSample(NamedTuple):
    x: np.ndarray
    assignment: object


def make_pg_samples(scenes: Sequence[Scene], priors: Sequence[AnchorPrior], strides, cfg: ProjectionConfig,
                    n_class: int = 2, ignore_iou: float = 0.5) -> list[PGSample]:
    grids = grids_for(strides, cfg)
    out = []
    for sc in scenes:
        x, _ = scene_input(sc.cloud, cfg)
        a = assign_targets(gt_map_boxes(sc.gts, cfg), priors, grids, cfg.max_range, n_class, ignore_iou)
        out.append(PGSample(x, a))
    return out


def pg_loss_fn(net: PGNet, weights: LossWeights = LossWeights()):
    """Summed stage-1 loss over a micro-batch with gradients of the sum."""
    net.set_input_grad(False)
    n_class = net.cfg.n_class

    def fn(params, samples):
        x = np.stack([s.x for s in samples])
        heads, cache = net.forward(params, x)
        total = 0.0
        comps: dict = {}
        dheads = [np.zeros_like(h) for h in heads]
        for b, s in enumerate(samples):
            loss, cp, g = stage1_loss([h[b] for h in heads], s.assignment, weights, n_class, with_grad=True)
            total += loss
            for k, v in cp.items():
                comps[k] = comps.get(k, 0.0) + v
            for d, gi in zip(dheads, g):
                d[b] = gi
        grads: dict = {}
        net.backward(params, cache, dheads, grads)
        return total, comps, grads

    return fn


# ------------------------------------------------------------------ stage 2


class PESample(NamedTuple):
    points: np.ndarray  # (n, 3) normalised canonical frame
    box: Box3D  # target in the same frame


@dataclass(frozen=True)
class CropConfig:
    n_points: int = 512
    margin_px: float = 2.0
    margin_m: float = 0.5
    min_points: int = 5


def object_sample(cloud: PointCloud, proj: Projection, frag: CylinderFragment, gt_box: Box3D,
                  cfg: ProjectionConfig, crop: CropConfig, rng: np.random.Generator,
                  jitter: bool = True) -> Optional[PESample]:
    pts = extrude_points(cloud, frag, cfg, projection=proj)
    if len(pts) < crop.min_points:
        return None
    can = to_canonical(pts, frag, cfg)
    box = box_to_canonical(gt_box, can.rotation)
    if jitter:
        can, box = augment(can, box, rng)
    norm = normalize_centroid(can)
    box = box.translated(*(-norm.centroid_offset))
    return PESample(sample_points(norm.points, crop.n_points, rng)[:, :3], box)


def make_pe_samples(scenes: Sequence[Scene], cfg: ProjectionConfig, crop: CropConfig, seed: int = 0,
                    copies: int = 8, proposals: Optional[dict] = None) -> list[PESample]:
    """Jittered crops around every ground truth, plus crops from matched proposals when given.

    ``proposals`` maps sample id to a list of ``(pixel_box, r1, r2)``; each is
    paired with the ground truth it overlaps most on the map (IoU >= 0.5).
    """
    rng = np.random.default_rng(seed)
    out = []
    for sc in scenes:
        proj = project_points(sc.cloud.points[:, :3], cfg)
        gts = [g for g in sc.gts if not g.dont_care]
        for g in gts:
            for _ in range(copies):
                region = perturb_box(g.box, rng)
                frag = CylinderFragment.from_box(region, cfg, crop.margin_px, crop.margin_m)
                s = object_sample(sc.cloud, proj, frag, g.box, cfg, crop, rng)
                if s is not None:
                    out.append(s)
        rects = [box_to_map_rect(g.box, cfg) for g in gts]
        for (cx, cy, w, h), r1, r2 in (proposals or {}).get(sc.sample, []):
            # map overlap alone cannot separate objects lined up along a ray
            ious = [_rect_iou((cx, cy, w, h), r) * (_interval_iou((r1, r2), r[4:]) >= 0.5) for r in rects]
            if not ious or max(ious) < 0.5:
                continue
            g = gts[int(np.argmax(ious))]
            frag = CylinderFragment.from_pixel_box(cx, cy, w + 2 * crop.margin_px, h + 2 * crop.margin_px,
                                                   r1 - crop.margin_m, r2 + crop.margin_m, cfg.max_range)
            for _ in range(max(copies // 2, 1)):
                s = object_sample(sc.cloud, proj, frag, g.box, cfg, crop, rng)
                if s is not None:
                    out.append(s)
    return out


def _rect_iou(cwh, rect) -> float:
    from .proposal import iou_2d_axis_aligned
    x0, y0, x1, y1 = rect[:4]
    return iou_2d_axis_aligned(cwh, ((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0))


def _interval_iou(a, b) -> float:
    lo, hi = max(min(a), min(b)), min(max(a), max(b))
    inter = max(0.0, hi - lo)
    union = max(a) - min(a) + max(b) - min(b) - inter
    return inter / union if union > 0 else 0.0


def pe_loss_fn(net: PENet, templates, delta: float = 1.0):
    n_heading = net.cfg.n_heading

    def fn(params, samples):
        pts = np.stack([s.points for s in samples])
        tg = encode_targets([s.box for s in samples], templates, n_heading)
        out, off, cache = net.forward(params, pts)
        total, comps, dout, doff = stage2_loss(out, off, tg, templates, n_heading, delta, with_grad=True)
        B = len(samples)
        grads: dict = {}
        net.backward(params, cache, dout * B, doff * B, grads)
        return total * B, {k: v * B for k, v in comps.items()}, grads

    return fn


# ---------------------------------------------------------------- inference


@dataclass(frozen=True)
class DetectConfig:
    score_threshold: float = 0.1
    nms_iou: float = 0.45
    crop: CropConfig = field(default_factory=CropConfig)
    # final boxes holding fewer cloud points than this are dropped
    min_support: int = 1


class ProposalSet(NamedTuple):
    boxes: np.ndarray  # (n, 4) pixel cx, cy, w, h
    r1: np.ndarray
    r2: np.ndarray
    score: np.ndarray
    stage1_class: np.ndarray


def radial_valid(dec: DecodedHeads, R: float, tol: float = 0.0) -> np.ndarray:
    """Mask of predictions whose radial interval is usable: 0 <= r1 <= r2 <= R, up to ``tol`` metres."""
    return (dec.r1 >= -tol) & (dec.r2 <= R + tol) & (dec.r1 <= dec.r2)


def select_proposals(dec: DecodedHeads, score_threshold: float, nms_iou: float) -> ProposalSet:
    """Per-class NMS on confidence x class score; classes are concatenated in index order."""
    keep, cls_of, score = [], [], []
    for c in range(dec.cls.shape[1] if len(dec) else 0):
        s = dec.conf * dec.cls[:, c]
        k = nms_indices(dec.boxes, s, nms_iou, score_threshold)
        keep.append(k)
        cls_of.append(np.full(len(k), c))
        score.append(s[k])
    if not keep:
        z = np.zeros(0)
        return ProposalSet(np.zeros((0, 4)), z, z, z, z.astype(int))
    k = np.concatenate(keep)
    return ProposalSet(dec.boxes[k], dec.r1[k], dec.r2[k], np.concatenate(score),
                       np.concatenate(cls_of).astype(int))


def extrude_proposals(cloud: PointCloud, props: ProposalSet, proj: Projection, cfg: ProjectionConfig,
                      crop: CropConfig):
    out = []
    for i in range(len(props.score)):
        cx, cy, w, h = props.boxes[i]
        frag = CylinderFragment.from_pixel_box(cx, cy, w + 2 * crop.margin_px, h + 2 * crop.margin_px,
                                               props.r1[i] - crop.margin_m, props.r2[i] + crop.margin_m,
                                               cfg.max_range)
        out.append((frag, extrude_points(cloud, frag, cfg, projection=proj)))
    return out


class Detector:
    def __init__(self, pg: PGNet, pg_params: dict, priors: Sequence[AnchorPrior], pe: PENet, pe_params: dict,
                 templates, proj_cfg: ProjectionConfig = ProjectionConfig(), cfg: DetectConfig = DetectConfig()):
        self.pg, self.pg_params, self.priors = pg, pg_params, list(priors)
        self.pe, self.pe_params, self.templates = pe, pe_params, list(templates)
        self.proj_cfg, self.cfg = proj_cfg, cfg
        self.grids = grids_for(pg.cfg.strides, proj_cfg)

    def heads(self, x: np.ndarray):
        return self.pg.forward(self.pg_params, x)[0]

    def decode(self, heads) -> DecodedHeads:
        """Confident predictions whose radial interval survives ``radial_valid``."""
        R = self.proj_cfg.max_range
        dec = decode_heads(heads, self.priors, self.grids, R, min_conf=self.cfg.score_threshold)
        return dec.subset(np.flatnonzero(radial_valid(dec, R, self.cfg.crop.margin_m)))

    def propose(self, cloud: PointCloud, projection: Optional[Projection] = None):
        x, proj = scene_input(cloud, self.proj_cfg, projection)
        return select_proposals(self.decode(self.heads(x)), self.cfg.score_threshold, self.cfg.nms_iou), proj

    def detect(self, cloud: PointCloud, sample: str = "0", seed: int = 0) -> list[Detection]:
        props, proj = self.propose(cloud)
        crop = self.cfg.crop
        rng = np.random.default_rng(seed)
        batch, meta = [], []
        for i, (frag, pts) in enumerate(extrude_proposals(cloud, props, proj, self.proj_cfg, crop)):
            if len(pts) < crop.min_points:
                continue
            norm = normalize_centroid(to_canonical(pts, frag, self.proj_cfg))
            batch.append(sample_points(norm.points, crop.n_points, rng)[:, :3])
            meta.append((i, norm.rotation, norm.centroid_offset))
        if not batch:
            return []
        out, off, _ = self.pe.forward(self.pe_params, np.stack(batch))
        boxes, sc = decode_output(out, off, self.templates, self.pe.cfg.n_heading)
        dets = []
        for (i, rot, cen), box, s in zip(meta, boxes, sc):
            sensor = box_from_canonical(box, rot, cen)
            if self.cfg.min_support > 0 and points_in_box(cloud.points[:, :3], sensor).sum() < self.cfg.min_support:
                continue
            dets.append(Detection(sensor, self.templates[int(s)].cls, float(props.score[i]), sample))
        return dets


# --------------------------------------------------------------- benchmark


STAGES = ("projection", "decode", "nms", "extrusion")


def benchmark(cloud: PointCloud, detector: Detector, reps: int = 30, warmup: int = 2) -> dict:
    """Median and p95 wall time (seconds) per non-network stage and end to end.

    The proposal network runs once up front; its head tensors are reused so
    the timings cover projection, decoding, NMS and extrusion only.
    """
    cfg, dcfg = detector.proj_cfg, detector.cfg
    x, _ = scene_input(cloud, cfg)
    heads = detector.heads(x)
    times = {k: [] for k in (*STAGES, "total")}
    for rep in range(warmup + reps):
        t0 = time.perf_counter()
        _, proj = scene_input(cloud, cfg)
        t1 = time.perf_counter()
        dec = detector.decode(heads)
        t2 = time.perf_counter()
        props = select_proposals(dec, dcfg.score_threshold, dcfg.nms_iou)
        t3 = time.perf_counter()
        extrude_proposals(cloud, props, proj, cfg, dcfg.crop)
        t4 = time.perf_counter()
        if rep >= warmup:
            for k, v in zip((*STAGES, "total"), (t1 - t0, t2 - t1, t3 - t2, t4 - t3, t4 - t0)):
                times[k].append(v)
    report = {k: {"median": float(np.median(v)), "p95": float(np.percentile(v, 95)), "reps": len(v)}
              for k, v in times.items()}
    report["points"] = len(cloud)
    report["proposals"] = int(len(props.score))
    return report
