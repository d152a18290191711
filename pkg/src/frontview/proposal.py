"""Front-view 3D proposals: anchor priors, box codec, targets, loss and NMS.

A proposal is a 2D box on the upscaled front-view map plus two truncated
radial distances ``r1 <= r2`` that cut the view frustum of the box into a
cylinder fragment. Raw network outputs map to proposals by::

    b_x = sigmoid(t_x) + c_x        b_w = p_w * exp(t_w)      r1 = t_r1 * R
    b_y = sigmoid(t_y) + c_y        b_h = p_h * exp(t_h)      r2 = t_r2 * R

``b_x, b_y`` are in grid-cell units of the owning output scale, sizes are
in map pixels and distances in meters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

STRIDES = (4, 8, 16)
N_BOX = 4
N_DIST = 2
EPS = 1e-7


class AnchorPrior(NamedTuple):
    p_w: float
    p_h: float
    scale_index: int


@dataclass(frozen=True)
class GridSpec:
    stride: int
    rows: int
    cols: int

    @classmethod
    def for_map(cls, stride: int, map_h: int = 128, map_w: int = 512) -> "GridSpec":
        if map_h % stride or map_w % stride:
            raise ValueError(f"stride {stride} does not divide the {map_h}x{map_w} map")
        return cls(stride, map_h // stride, map_w // stride)


def default_grids(map_h: int = 128, map_w: int = 512, strides: Sequence[int] = STRIDES) -> list[GridSpec]:
    return [GridSpec.for_map(s, map_h, map_w) for s in strides]


@dataclass
class RawPrediction:
    t_x: float
    t_y: float
    t_w: float
    t_h: float
    t_r1: float
    t_r2: float
    conf_logit: float = 0.0
    class_logits: tuple = (0.0, 0.0)

    def as_array(self) -> np.ndarray:
        return np.array([self.t_x, self.t_y, self.t_w, self.t_h, self.t_r1, self.t_r2,
                         self.conf_logit, *self.class_logits])


@dataclass
class Proposal3D:
    b_x: float
    b_y: float
    b_w: float
    b_h: float
    r1: float
    r2: float
    confidence: float = 1.0
    class_scores: tuple = ()
    stride: int = 1
    label: int = -1  # stage-1 class index when known

    def pixel_box(self) -> tuple[float, float, float, float]:
        """``(cx, cy, w, h)`` in map pixels."""
        return (self.b_x * self.stride, self.b_y * self.stride, self.b_w, self.b_h)


@dataclass(frozen=True)
class LossWeights:
    coord: float = 1.0
    conf: float = 1.0
    cls: float = 1.0
    reg: float = 1.0
    huber_delta: float = 1.0

    def __post_init__(self):
        if min(self.coord, self.conf, self.cls, self.reg, self.huber_delta) < 0:
            raise ValueError("loss weights must be non-negative")


# --------------------------------------------------------------------- anchors


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    for _ in range(1, k):
        d2 = np.min(((x[:, None, :] - np.array(centers)[None]) ** 2).sum(-1), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(len(x))])
            continue
        centers.append(x[rng.choice(len(x), p=d2 / total)])
    return np.array(centers, dtype=np.float64)


def cluster_anchors(wh, k: int = 9, seed: int = 0, n_scales: int = 3, max_iter: int = 300) -> list[AnchorPrior]:
    """K-means (squared Euclidean, k-means++ seeding) over box ``(w, h)`` pairs.

    Centroids are sorted by area and split into ``n_scales`` equal groups,
    smallest group to the finest stride.
    """
    x = np.asarray(wh, dtype=np.float64).reshape(-1, 2)
    if len(x) < k:
        raise ValueError(f"need at least {k} boxes to form {k} clusters, got {len(x)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(x, k, rng)
    for _ in range(max_iter):
        assign = np.argmin(((x[:, None, :] - centers[None]) ** 2).sum(-1), axis=1)
        new = centers.copy()
        for j in range(k):
            members = x[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    centers = centers[np.argsort(centers[:, 0] * centers[:, 1], kind="stable")]
    return [AnchorPrior(float(w), float(h), i * n_scales // k) for i, (w, h) in enumerate(centers)]


def priors_by_scale(priors: Sequence[AnchorPrior], n_scales: int) -> list[list[int]]:
    groups: list[list[int]] = [[] for _ in range(n_scales)]
    for i, p in enumerate(priors):
        groups[p.scale_index].append(i)
    return groups


def write_anchors(path, priors: Sequence[AnchorPrior]) -> None:
    with open(path, "w") as f:
        for p in priors:
            f.write(f"{p.p_w!r} {p.p_h!r} {p.scale_index}\n")


def read_anchors(path) -> list[AnchorPrior]:
    priors = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 'p_w p_h scale_index'")
            pw, ph, s = float(parts[0]), float(parts[1]), int(parts[2])
            if pw <= 0 or ph <= 0 or s < 0:
                raise ValueError(f"{path}:{lineno}: invalid prior")
            priors.append(AnchorPrior(pw, ph, s))
    return priors


# ----------------------------------------------------------------------- codec


def sigmoid(x):
    """Numerically stable logistic function for scalars or arrays."""
    if np.isscalar(x):
        if x >= 0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def logit(p):
    return np.log(p) - np.log1p(-p)


def decode(raw: RawPrediction, cell: tuple[int, int], prior: AnchorPrior, R: float, stride: int = 1) -> Proposal3D:
    cx, cy = cell
    return Proposal3D(
        b_x=sigmoid(raw.t_x) + cx,
        b_y=sigmoid(raw.t_y) + cy,
        b_w=prior.p_w * math.exp(raw.t_w),
        b_h=prior.p_h * math.exp(raw.t_h),
        r1=raw.t_r1 * R,
        r2=raw.t_r2 * R,
        confidence=sigmoid(raw.conf_logit),
        class_scores=tuple(sigmoid(c) for c in raw.class_logits),
        stride=stride,
    )


def _inv_sigmoid_checked(p: float, what: str) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"{what} offset {p} must lie strictly inside (0, 1)")
    return math.log(p) - math.log1p(-p)


def encode(p: Proposal3D, cell: tuple[int, int], prior: AnchorPrior, R: float) -> RawPrediction:
    cx, cy = cell
    if p.b_w <= 0 or p.b_h <= 0:
        raise ValueError("box sizes must be positive")
    conf = min(max(p.confidence, EPS), 1 - EPS)
    return RawPrediction(
        t_x=_inv_sigmoid_checked(p.b_x - cx, "x"),
        t_y=_inv_sigmoid_checked(p.b_y - cy, "y"),
        t_w=math.log(p.b_w / prior.p_w),
        t_h=math.log(p.b_h / prior.p_h),
        t_r1=p.r1 / R,
        t_r2=p.r2 / R,
        conf_logit=math.log(conf) - math.log1p(-conf),
        class_logits=tuple(math.log(min(max(s, EPS), 1 - EPS)) - math.log1p(-min(max(s, EPS), 1 - EPS))
                           for s in p.class_scores),
    )


def head_channels(n_priors: int, n_class: int) -> int:
    return n_priors * (N_BOX + N_DIST + 1 + n_class)


def split_head(head: np.ndarray, n_priors: int) -> np.ndarray:
    """``(M, N, A*(7+C))`` -> ``(M, N, A, 7+C)`` view."""
    m, n, c = head.shape
    return head.reshape(m, n, n_priors, c // n_priors)


@dataclass
class DecodedHeads:
    """Flat arrays of every decoded prediction across scales."""

    boxes: np.ndarray  # (n, 4) pixel cx, cy, w, h
    r1: np.ndarray
    r2: np.ndarray
    conf: np.ndarray
    cls: np.ndarray  # (n, n_class)
    scale: np.ndarray
    prior: np.ndarray
    row: np.ndarray
    col: np.ndarray
    strides: tuple = ()

    def __len__(self):
        return len(self.conf)

    def subset(self, idx) -> "DecodedHeads":
        return DecodedHeads(self.boxes[idx], self.r1[idx], self.r2[idx], self.conf[idx], self.cls[idx],
                            self.scale[idx], self.prior[idx], self.row[idx], self.col[idx], self.strides)

    def proposal(self, i: int) -> Proposal3D:
        s = self.strides[self.scale[i]]
        return Proposal3D(self.boxes[i, 0] / s, self.boxes[i, 1] / s, self.boxes[i, 2], self.boxes[i, 3],
                          float(self.r1[i]), float(self.r2[i]), float(self.conf[i]),
                          tuple(float(c) for c in self.cls[i]), s)


def decode_heads(heads: Sequence[np.ndarray], priors: Sequence[AnchorPrior], grids: Sequence[GridSpec],
                 R: float, min_conf: float = 0.0) -> DecodedHeads:
    """Vectorised decode of all scales; predictions with confidence below ``min_conf`` are dropped."""
    groups = priors_by_scale(priors, len(grids))
    parts = []
    for s, (head, grid) in enumerate(zip(heads, grids)):
        ids = groups[s]
        if not ids:
            continue
        h = split_head(head, len(ids))
        conf = sigmoid(h[..., 6])
        rr, cc, aa = np.nonzero(conf >= min_conf) if min_conf > 0 else np.indices(conf.shape).reshape(3, -1)
        sel = h[rr, cc, aa]
        pw = np.array([priors[i].p_w for i in ids])[aa]
        ph = np.array([priors[i].p_h for i in ids])[aa]
        bx = (sigmoid(sel[:, 0]) + cc) * grid.stride
        by = (sigmoid(sel[:, 1]) + rr) * grid.stride
        boxes = np.stack([bx, by, pw * np.exp(sel[:, 2]), ph * np.exp(sel[:, 3])], axis=1)
        parts.append((boxes, sel[:, 4] * R, sel[:, 5] * R, conf[rr, cc, aa], sigmoid(sel[:, 7:]),
                      np.full(len(rr), s), np.array(ids, dtype=np.int64)[aa], rr, cc))
    strides = tuple(g.stride for g in grids)
    if not parts:
        z = np.zeros(0)
        return DecodedHeads(np.zeros((0, 4)), z, z, z, np.zeros((0, 0)), z.astype(int), z.astype(int),
                            z.astype(int), z.astype(int), strides)
    cat = [np.concatenate(p) for p in zip(*parts)]
    return DecodedHeads(*cat, strides=strides)


# ------------------------------------------------------------------ assignment


def iou_2d_axis_aligned(a, b) -> float:
    """IoU of two ``(cx, cy, w, h)`` rectangles."""
    ax0, ax1 = a[0] - a[2] / 2, a[0] + a[2] / 2
    ay0, ay1 = a[1] - a[3] / 2, a[1] + a[3] / 2
    bx0, bx1 = b[0] - b[2] / 2, b[0] + b[2] / 2
    by0, by1 = b[1] - b[3] / 2, b[1] + b[3] / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union if union > 0 else 0.0


def iou_one_to_many(box, boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x0 = np.maximum(box[0] - box[2] / 2, boxes[:, 0] - boxes[:, 2] / 2)
    x1 = np.minimum(box[0] + box[2] / 2, boxes[:, 0] + boxes[:, 2] / 2)
    y0 = np.maximum(box[1] - box[3] / 2, boxes[:, 1] - boxes[:, 3] / 2)
    y1 = np.minimum(box[1] + box[3] / 2, boxes[:, 1] + boxes[:, 3] / 2)
    inter = np.clip(x1 - x0, 0, None) * np.clip(y1 - y0, 0, None)
    union = box[2] * box[3] + boxes[:, 2] * boxes[:, 3] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


POSITIVE, NEGATIVE, IGNORED = 1, 0, -1


@dataclass
class TargetAssignment:
    """Per-scale ``(M, N, A)`` state arrays plus targets for positive slots.

    ``targets[s][m, n, a]`` holds ``[x_off, y_off, t_w, t_h, t_r1, t_r2, cls...]``
    for positive slots and zeros elsewhere.
    """

    state: list[np.ndarray]
    gt_index: list[np.ndarray]
    targets: list[np.ndarray]
    positives: list[tuple[int, int, int, int]] = field(default_factory=list)  # (scale, row, col, prior slot)

    @property
    def n_positive(self) -> int:
        return len(self.positives)


def assign_targets(gts: Sequence[Proposal3D], priors: Sequence[AnchorPrior], grids: Sequence[GridSpec],
                   R: float, n_class: int = 2, ignore_iou: float = 0.5) -> TargetAssignment:
    """Give each ground truth exactly one responsible prior.

    The responsible prior is the one whose shape (both boxes centred at the
    origin) overlaps the ground truth most, placed at the cell containing the
    ground-truth centre on that prior's scale. If the slot is already taken,
    the next best free prior is used. Other slots whose anchor box, placed at
    its cell centre, overlaps the ground truth by more than ``ignore_iou`` are
    ignored.
    """
    groups = priors_by_scale(priors, len(grids))
    slot_of = {}
    for s, ids in enumerate(groups):
        for a, i in enumerate(ids):
            slot_of[i] = (s, a)
    state = [np.zeros((g.rows, g.cols, len(groups[s])), dtype=np.int8) for s, g in enumerate(grids)]
    gt_index = [np.full((g.rows, g.cols, len(groups[s])), -1, dtype=np.int64) for s, g in enumerate(grids)]
    targets = [np.zeros((g.rows, g.cols, len(groups[s]), N_BOX + N_DIST + n_class)) for s, g in enumerate(grids)]
    map_h = grids[0].rows * grids[0].stride
    map_w = grids[0].cols * grids[0].stride
    positives = []
    ignore_masks = [np.zeros(st.shape, dtype=bool) for st in state]

    for gi, gt in enumerate(gts):
        cx, cy, w, h = gt.pixel_box()
        if not (0 <= cx < map_w and 0 <= cy < map_h):
            raise ValueError(f"ground truth {gi} centre ({cx:.2f}, {cy:.2f}) lies outside the {map_h}x{map_w} map")
        if w <= 0 or h <= 0:
            raise ValueError(f"ground truth {gi} has non-positive size")
        shape_iou = np.array([iou_2d_axis_aligned((0, 0, w, h), (0, 0, p.p_w, p.p_h)) for p in priors])
        order = sorted(range(len(priors)), key=lambda i: (-shape_iou[i], i))
        chosen = None
        for i in order:
            s, a = slot_of[i]
            g = grids[s]
            col, row = int(cx // g.stride), int(cy // g.stride)
            if state[s][row, col, a] != POSITIVE:
                chosen = (s, row, col, a, i)
                break
        if chosen is None:
            raise ValueError(f"no free prior slot for ground truth {gi}")
        s, row, col, a, i = chosen
        g = grids[s]
        state[s][row, col, a] = POSITIVE
        gt_index[s][row, col, a] = gi
        t = targets[s][row, col, a]
        t[0] = cx / g.stride - col
        t[1] = cy / g.stride - row
        t[2] = math.log(w / priors[i].p_w)
        t[3] = math.log(h / priors[i].p_h)
        t[4] = gt.r1 / R
        t[5] = gt.r2 / R
        if gt.label >= 0:
            t[6 + gt.label] = 1.0
        positives.append((s, row, col, a))

        for s2, grid in enumerate(grids):
            ids = groups[s2]
            if not ids:
                continue
            ys = (np.arange(grid.rows) + 0.5) * grid.stride
            xs = (np.arange(grid.cols) + 0.5) * grid.stride
            for a2, i2 in enumerate(ids):
                p = priors[i2]
                ix = np.clip(np.minimum(cx + w / 2, xs + p.p_w / 2) - np.maximum(cx - w / 2, xs - p.p_w / 2), 0, None)
                iy = np.clip(np.minimum(cy + h / 2, ys + p.p_h / 2) - np.maximum(cy - h / 2, ys - p.p_h / 2), 0, None)
                inter = iy[:, None] * ix[None, :]
                iou = inter / (w * h + p.p_w * p.p_h - inter)
                ignore_masks[s2][:, :, a2] |= iou > ignore_iou

    for s in range(len(grids)):
        state[s][(ignore_masks[s]) & (state[s] != POSITIVE)] = IGNORED
    return TargetAssignment(state, gt_index, targets, positives)


# ------------------------------------------------------------------------ loss


def bce(p, y, eps: float = EPS) -> float:
    """Mean binary cross entropy with probabilities clamped to ``[eps, 1 - eps]``."""
    p = np.asarray(p, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} probabilities vs {y.size} targets")
    if p.size == 0:
        return 0.0
    pc = np.clip(p, eps, 1 - eps)
    return float(-np.mean(y * np.log(pc) + (1 - y) * np.log(1 - pc)))


def huber(x, delta: float = 1.0):
    if delta <= 0:
        raise ValueError("delta must be positive")
    ax = np.abs(x)
    out = np.where(ax < delta, 0.5 * np.square(x), delta * ax - 0.5 * delta * delta)
    return float(out) if np.ndim(out) == 0 else out


def huber_grad(x, delta: float = 1.0):
    return np.where(np.abs(x) < delta, x, delta * np.sign(x))


def _bce_terms(logits, y, eps=EPS):
    """Elementwise clamped BCE and its derivative with respect to the logits."""
    p = sigmoid(logits)
    pc = np.clip(p, eps, 1 - eps)
    loss = -(y * np.log(pc) + (1 - y) * np.log(1 - pc))
    inside = (p > eps) & (p < 1 - eps)
    grad = np.where(inside, p - y, 0.0)
    return loss, grad


def _entropy(y, eps=EPS):
    yc = np.clip(y, eps, 1 - eps)
    return -(y * np.log(yc) + (1 - y) * np.log(1 - yc))


def stage1_loss(heads: Sequence[np.ndarray], assignment: TargetAssignment, weights: LossWeights = LossWeights(),
                n_class: int = 2, with_grad: bool = False):
    """Multi-task proposal loss for one sample.

    Components (unweighted, returned in a dict keyed coord/conf/cls/reg):

    * coord: BCE of ``sigmoid(t_x), sigmoid(t_y)`` against the in-cell offsets
      of positive slots, minus the target entropy so a perfect fit scores 0
      (gradients are unchanged by the shift); mean over elements.
    * conf: BCE of the confidence over positive and negative slots; mean.
    * cls: multi-label BCE over class scores of positive slots; mean.
    * reg: Huber of ``(t_w, t_h, t_r1, t_r2)`` residuals, summed over the four
      fields and averaged over positive slots.

    ``total = sum(weight * component)``. With ``with_grad`` the gradient of
    ``total`` with respect to every head tensor is also returned.
    """
    nf = N_BOX + N_DIST + 1 + n_class
    hs = [split_head(h, h.shape[-1] // nf) for h in heads]
    grads = [np.zeros_like(h) for h in hs] if with_grad else None

    pos_logits, pos_targets, pos_loc = [], [], []
    conf_logits, conf_y, conf_loc = [], [], []
    for s, h in enumerate(hs):
        st = assignment.state[s]
        pm = st == POSITIVE
        cm = st != IGNORED
        pos_logits.append(h[pm])
        pos_targets.append(assignment.targets[s][pm])
        pos_loc.append(pm)
        conf_logits.append(h[..., 6][cm])
        conf_y.append(pm[cm].astype(np.float64))
        conf_loc.append(cm)
    P = np.concatenate(pos_logits) if pos_logits else np.zeros((0, nf))
    T = np.concatenate(pos_targets) if pos_targets else np.zeros((0, nf - 1))
    CL = np.concatenate(conf_logits)
    CY = np.concatenate(conf_y)
    npos = P.shape[0]
    delta = weights.huber_delta

    comps = {"coord": 0.0, "conf": 0.0, "cls": 0.0, "reg": 0.0}
    gP = np.zeros_like(P)
    if npos:
        lc, gc = _bce_terms(P[:, 0:2], T[:, 0:2])
        comps["coord"] = float(np.mean(lc - _entropy(T[:, 0:2])))
        gP[:, 0:2] = weights.coord * gc / lc.size
        lk, gk = _bce_terms(P[:, 7:], T[:, 6:])
        comps["cls"] = float(np.mean(lk))
        gP[:, 7:] = weights.cls * gk / max(lk.size, 1)
        r = P[:, 2:6] - T[:, 2:6]
        comps["reg"] = float(np.sum(huber(r, delta)) / npos)
        gP[:, 2:6] = weights.reg * huber_grad(r, delta) / npos
    if CL.size:
        lf, gf = _bce_terms(CL, CY)
        comps["conf"] = float(np.mean(lf))
        gCL = weights.conf * gf / CL.size
    total = (weights.coord * comps["coord"] + weights.conf * comps["conf"]
             + weights.cls * comps["cls"] + weights.reg * comps["reg"])
    if not with_grad:
        return total, comps

    off_p = off_c = 0
    for s, h in enumerate(hs):
        g = grads[s]
        k = int(pos_loc[s].sum())
        g[pos_loc[s]] += gP[off_p:off_p + k]
        off_p += k
        k = int(conf_loc[s].sum())
        if k:
            sub = g[..., 6]
            sub[conf_loc[s]] += gCL[off_c:off_c + k]
        off_c += k
    return total, comps, [g.reshape(heads[s].shape) for s, g in enumerate(grads)]


# ------------------------------------------------------------------------- NMS


def nms_indices(boxes: np.ndarray, scores: np.ndarray, iou_threshold: float = 0.45,
                score_threshold: float = 0.0) -> np.ndarray:
    """Greedy NMS over ``(cx, cy, w, h)`` boxes; returns kept indices by descending score.

    Equal scores keep input order. Boxes scoring below ``score_threshold``
    are dropped before suppression.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    scores = np.asarray(scores, dtype=np.float64).ravel()
    cand = np.flatnonzero(scores >= score_threshold)
    order = cand[np.argsort(-scores[cand], kind="stable")]
    if order.size == 0:
        return order
    b = boxes[order]
    x0 = b[:, 0] - b[:, 2] / 2
    x1 = b[:, 0] + b[:, 2] / 2
    y0 = b[:, 1] - b[:, 3] / 2
    y1 = b[:, 1] + b[:, 3] / 2
    area = b[:, 2] * b[:, 3]
    alive = np.ones(order.size, dtype=bool)
    keep = []
    for i in range(order.size):
        if not alive[i]:
            continue
        keep.append(i)
        rest = np.flatnonzero(alive[i + 1:]) + i + 1
        if rest.size == 0:
            break
        iw = np.clip(np.minimum(x1[i], x1[rest]) - np.maximum(x0[i], x0[rest]), 0, None)
        ih = np.clip(np.minimum(y1[i], y1[rest]) - np.maximum(y0[i], y0[rest]), 0, None)
        inter = iw * ih
        union = area[i] + area[rest] - inter
        iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
        alive[rest[iou > iou_threshold]] = False
    return order[np.array(keep, dtype=np.int64)]


def nms(proposals: Sequence[Proposal3D], iou_threshold: float = 0.45, score_threshold: float = 0.1) -> list[Proposal3D]:
    if not proposals:
        return []
    boxes = np.array([p.pixel_box() for p in proposals])
    scores = np.array([p.confidence for p in proposals])
    return [proposals[i] for i in nms_indices(boxes, scores, iou_threshold, score_threshold)]
