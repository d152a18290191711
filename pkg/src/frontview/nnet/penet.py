"""Point network for amodal box estimation and its multi-task loss.

Output layout per sample (``N_S`` size templates, ``N_H`` heading bins)::

    [center residual x3 | size scores xN_S | size residuals x3*N_S |
     heading scores xN_H | heading residuals xN_H]

Size residuals are relative to the template dimensions ``(h, w, l)``;
heading residuals are in units of half a bin width.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..core import CORNER_SIGNS, TWO_PI, Box3D, ClassId
from ..proposal import huber, huber_grad
from .layers import Dense, LeakyReLU, MaxPoolPoints, Sequential, mlp

CE_EPS = 1e-7


class SizeTemplate(NamedTuple):
    cls: ClassId
    h: float
    w: float
    l: float


DEFAULT_TEMPLATES = (
    SizeTemplate(ClassId.CAR, 1.52, 1.63, 3.88),
    SizeTemplate(ClassId.PEDESTRIAN, 1.76, 0.66, 0.84),
    SizeTemplate(ClassId.CYCLIST, 1.74, 0.60, 1.76),
)


def templates_from_boxes(boxes: Sequence[Box3D], classes: Sequence[ClassId],
                         order=(ClassId.CAR, ClassId.PEDESTRIAN, ClassId.CYCLIST)) -> list[SizeTemplate]:
    """Mean ``(h, w, l)`` per class; classes without samples fall back to the defaults."""
    out = []
    for c in order:
        sizes = [b.size for b, k in zip(boxes, classes) if k is c]
        if sizes:
            h, w, l = np.mean(sizes, axis=0)
            out.append(SizeTemplate(c, float(h), float(w), float(l)))
        else:
            out.append(next(t for t in DEFAULT_TEMPLATES if t.cls is c))
    return out


def template_array(templates) -> np.ndarray:
    return np.array([[t.h, t.w, t.l] for t in templates], dtype=np.float64)


@dataclass(frozen=True)
class PENetConfig:
    mlp_widths: tuple = (64, 128, 256)
    fc_widths: tuple = (256, 128)
    tnet_widths: tuple = (64, 128)
    n_size: int = 3
    n_heading: int = 12
    in_features: int = 3
    slope: float = 0.1

    @property
    def out_dim(self) -> int:
        return 3 + 4 * self.n_size + 2 * self.n_heading

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PENetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class OutputSlices(NamedTuple):
    center: slice
    size_cls: slice
    size_res: slice
    head_cls: slice
    head_res: slice


def output_slices(n_size: int, n_heading: int) -> OutputSlices:
    a = 3
    b = a + n_size
    c = b + 3 * n_size
    d = c + n_heading
    return OutputSlices(slice(0, a), slice(a, b), slice(b, c), slice(c, d), slice(d, d + n_heading))


class PENet:
    """T-Net centre offset, then shared MLP, max-pool and fully connected head."""

    def __init__(self, cfg: PENetConfig = PENetConfig()):
        self.cfg = cfg
        s = cfg.slope
        self.tnet_mlp = mlp("tnet.mlp", (cfg.in_features, *cfg.tnet_widths), s)
        self.tnet_pool = MaxPoolPoints()
        self.tnet_fc = Dense("tnet.fc", cfg.tnet_widths[-1], 3, gain=0.1)
        self.point_mlp = mlp("mlp", (cfg.in_features, *cfg.mlp_widths), s)
        self.pool = MaxPoolPoints()
        fc = []
        widths = (cfg.mlp_widths[-1], *cfg.fc_widths)
        for i in range(len(widths) - 1):
            fc += [Dense(f"fc.{i}", widths[i], widths[i + 1]), LeakyReLU(s)]
        fc.append(Dense("out", widths[-1], cfg.out_dim, gain=0.1))
        self.fc = Sequential(fc)

    def modules(self):
        return [self.tnet_mlp, self.tnet_fc, self.point_mlp, self.fc]

    def param_shapes(self):
        out = {}
        for m in self.modules():
            out.update(m.param_shapes())
        return out

    def init(self, rng: np.random.Generator) -> dict:
        params: dict = {}
        for m in self.modules():
            m.init(params, rng)
        return params

    def forward(self, params: dict, pts: np.ndarray):
        """``pts``: ``(B, n, 3)`` or ``(n, 3)``. Returns ``(output, tnet_offset, cache)``."""
        squeeze = pts.ndim == 2
        x = pts[None] if squeeze else pts
        if x.shape[1] < 1:
            raise ValueError("the point network needs at least one point per sample")
        x = x[..., :self.cfg.in_features]
        t, c_tm = self.tnet_mlp.forward(params, x)
        t, c_tp = self.tnet_pool.forward(params, t)
        offset, c_tf = self.tnet_fc.forward(params, t)
        centered = x - offset[:, None, :]
        f, c_pm = self.point_mlp.forward(params, centered)
        g, c_pool = self.pool.forward(params, f)
        out, c_fc = self.fc.forward(params, g)
        cache = (squeeze, c_tm, c_tp, c_tf, c_pm, c_pool, c_fc)
        if squeeze:
            return out[0], offset[0], cache
        return out, offset, cache

    def backward(self, params, cache, dout, doffset, grads):
        squeeze, c_tm, c_tp, c_tf, c_pm, c_pool, c_fc = cache
        if squeeze:
            dout, doffset = dout[None], doffset[None]
        dg = self.fc.backward(params, c_fc, dout, grads)
        df = self.pool.backward(params, c_pool, dg, grads)
        dcent = self.point_mlp.backward(params, c_pm, df, grads)
        doff = doffset - dcent.sum(axis=1)
        dt = self.tnet_fc.backward(params, c_tf, doff, grads)
        dt = self.tnet_pool.backward(params, c_tp, dt, grads)
        dx = dcent + self.tnet_mlp.backward(params, c_tm, dt, grads)
        return dx[0] if squeeze else dx


def penet_forward(params: dict, pts: np.ndarray, cfg: PENetConfig = PENetConfig()):
    out, offset, _ = PENet(cfg).forward(params, pts)
    return out, offset


# ------------------------------------------------------------------- geometry


def heading_bin(heading: float, n_heading: int) -> tuple[int, float]:
    """Bin index and residual (in half-bin units) of an angle in ``[0, 2*pi)``."""
    width = TWO_PI / n_heading
    b = min(int(math.floor(heading / width)), n_heading - 1)
    center = (b + 0.5) * width
    return b, (heading - center) / (width / 2)


def bin_center(b, n_heading: int):
    return (np.asarray(b) + 0.5) * (TWO_PI / n_heading)


def nearest_template(size: np.ndarray, tmpl: np.ndarray) -> int:
    return int(np.argmin(((tmpl - size) ** 2).sum(axis=1)))


def corners_batch(center, size, heading):
    """``(B, 8, 3)`` corners for arrays of centres ``(B,3)``, sizes ``(B,3)`` as ``(h,w,l)`` and headings ``(B,)``."""
    h, w, l = size[:, 0], size[:, 1], size[:, 2]
    lx = CORNER_SIGNS[None, :, 0] * l[:, None] / 2
    ly = CORNER_SIGNS[None, :, 1] * w[:, None] / 2
    lz = CORNER_SIGNS[None, :, 2] * h[:, None] / 2
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    out = np.empty((len(h), 8, 3))
    out[..., 0] = c * lx - s * ly + center[:, 0:1]
    out[..., 1] = s * lx + c * ly + center[:, 1:2]
    out[..., 2] = lz + center[:, 2:3]
    return out


def _corner_loss_batch(center, size, heading, gt_center, gt_size, gt_heading, delta):
    """Per-sample corner loss and gradients w.r.t. centre, size and heading."""
    pc = corners_batch(center, size, heading)
    g0 = corners_batch(gt_center, gt_size, gt_heading)
    g1 = corners_batch(gt_center, gt_size, gt_heading + math.pi)
    losses, dcs = [], []
    for g in (g0, g1):
        diff = pc - g
        d = np.sqrt((diff ** 2).sum(-1))
        losses.append(huber(d, delta).mean(axis=1))
        # d/dd huber(d) / d, safe at d = 0 in the quadratic branch
        scale = np.where(d < delta, 1.0, delta / np.where(d > 0, d, 1.0))
        dcs.append(scale[..., None] * diff / 8.0)
    pick = losses[1] < losses[0]
    loss = np.where(pick, losses[1], losses[0])
    dcorner = np.where(pick[:, None, None], dcs[1], dcs[0])  # dL/dcorners (B, 8, 3)

    dcenter = dcorner.sum(axis=1)
    h, w, l = size[:, 0], size[:, 1], size[:, 2]
    c, s = np.cos(heading)[:, None], np.sin(heading)[:, None]
    sx, sy, sz = CORNER_SIGNS[None, :, 0], CORNER_SIGNS[None, :, 1], CORNER_SIGNS[None, :, 2]
    gx, gy, gz = dcorner[..., 0], dcorner[..., 1], dcorner[..., 2]
    dl = ((gx * c + gy * s) * sx / 2).sum(axis=1)
    dw = ((-gx * s + gy * c) * sy / 2).sum(axis=1)
    dh = (gz * sz / 2).sum(axis=1)
    lx = sx * l[:, None] / 2
    ly = sy * w[:, None] / 2
    dhead = (gx * (-s * lx - c * ly) + gy * (c * lx - s * ly)).sum(axis=1)
    return loss, dcenter, np.stack([dh, dw, dl], axis=1), dhead


def corner_loss(pred: Box3D, gt: Box3D, delta: float = 1.0) -> float:
    """Mean Huber corner distance, minimised over a pi flip of the ground-truth heading."""
    loss, *_ = _corner_loss_batch(pred.center[None], pred.size[None], np.array([pred.heading]),
                                  gt.center[None], gt.size[None], np.array([gt.heading]), delta)
    return float(loss[0])


# ----------------------------------------------------------------------- loss


def _ce(scores, target):
    """Cross entropy with the target probability clamped at ``CE_EPS``; returns (loss, dscores)."""
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    pt = p[np.arange(len(target)), target]
    loss = -np.log(np.maximum(pt, CE_EPS))
    g = p.copy()
    g[np.arange(len(target)), target] -= 1.0
    g[pt <= CE_EPS] = 0.0
    return loss, g


class Stage2Targets(NamedTuple):
    center: np.ndarray  # (B, 3)
    size: np.ndarray  # (B, 3) h, w, l
    heading: np.ndarray  # (B,)
    size_class: np.ndarray  # (B,) int
    size_res: np.ndarray  # (B, 3)
    head_bin: np.ndarray  # (B,) int
    head_res: np.ndarray  # (B,)


def encode_targets(boxes: Sequence[Box3D], templates, n_heading: int, size_class=None) -> Stage2Targets:
    """Regression targets for ground-truth boxes in the normalised canonical frame.

    ``size_class`` overrides the nearest-template choice (e.g. with the
    ground-truth class index).
    """
    tmpl = template_array(templates)
    center = np.array([b.center for b in boxes]).reshape(-1, 3)
    size = np.array([b.size for b in boxes]).reshape(-1, 3)
    heading = np.array([b.heading for b in boxes])
    if size_class is None:
        sc = np.array([nearest_template(s, tmpl) for s in size], dtype=np.int64)
    else:
        sc = np.asarray(size_class, dtype=np.int64).reshape(-1)
    sres = size / tmpl[sc] - 1.0
    hb, hr = zip(*(heading_bin(h, n_heading) for h in heading)) if len(heading) else ((), ())
    return Stage2Targets(center, size, heading, sc, sres, np.array(hb, dtype=np.int64), np.array(hr))


COMPONENTS = ("c1_reg", "c2_reg", "s_cls", "s_reg", "h_cls", "h_reg", "corner")


def stage2_loss(output: np.ndarray, offset: np.ndarray, targets: Stage2Targets, templates,
                n_heading: int = 12, delta: float = 1.0, with_grad: bool = False):
    """Sum of the seven unit-weighted terms, averaged over the batch.

    Huber terms are summed over vector components. The corner term uses the
    ground-truth size template and heading bin with the predicted residuals.
    Returns ``(total, components)`` or, with ``with_grad``,
    ``(total, components, doutput, doffset)``.
    """
    squeeze = output.ndim == 1
    out = output[None] if squeeze else output
    off = offset[None] if squeeze else offset
    B = out.shape[0]
    n_size = len(templates)
    tmpl = template_array(templates)
    sl = output_slices(n_size, n_heading)
    rows = np.arange(B)
    half_bin = math.pi / n_heading

    center_res = out[:, sl.center]
    size_scores = out[:, sl.size_cls]
    size_res = out[:, sl.size_res].reshape(B, n_size, 3)
    head_scores = out[:, sl.head_cls]
    head_res = out[:, sl.head_res]
    t = targets

    pred_center = off + center_res
    e1 = off - t.center
    e2 = pred_center - t.center
    c1 = huber(e1, delta).sum(axis=1)
    c2 = huber(e2, delta).sum(axis=1)
    s_cls, g_scls = _ce(size_scores, t.size_class)
    er_s = size_res[rows, t.size_class] - t.size_res
    s_reg = huber(er_s, delta).sum(axis=1)
    h_cls, g_hcls = _ce(head_scores, t.head_bin)
    er_h = head_res[rows, t.head_bin] - t.head_res
    h_reg = huber(er_h, delta)

    psize = tmpl[t.size_class] * (1.0 + size_res[rows, t.size_class])
    phead = bin_center(t.head_bin, n_heading) + head_res[rows, t.head_bin] * half_bin
    corner, dc_center, dc_size, dc_head = _corner_loss_batch(
        pred_center, psize, phead, t.center, t.size, t.heading, delta)

    per = np.stack([c1, c2, s_cls, s_reg, h_cls, np.atleast_1d(h_reg), corner], axis=1)
    comps = dict(zip(COMPONENTS, (float(v) for v in per.mean(axis=0))))
    total = float(per.sum(axis=1).mean())
    if not with_grad:
        return total, comps

    dout = np.zeros_like(out)
    doff = np.zeros_like(off)
    g1 = huber_grad(e1, delta)
    g2 = huber_grad(e2, delta) + dc_center
    doff += g1 + g2
    dout[:, sl.center] = g2
    dout[:, sl.size_cls] = g_scls
    dsr = np.zeros((B, n_size, 3))
    dsr[rows, t.size_class] = huber_grad(er_s, delta) + dc_size * tmpl[t.size_class]
    dout[:, sl.size_res] = dsr.reshape(B, -1)
    dout[:, sl.head_cls] = g_hcls
    dhr = np.zeros((B, n_heading))
    dhr[rows, t.head_bin] = huber_grad(er_h, delta) + dc_head * half_bin
    dout[:, sl.head_res] = dhr
    dout /= B
    doff /= B
    if squeeze:
        return total, comps, dout[0], doff[0]
    return total, comps, dout, doff


def decode_output(output: np.ndarray, offset: np.ndarray, templates, n_heading: int = 12):
    """Boxes (normalised canonical frame) and size-class indices from network outputs."""
    out = np.atleast_2d(output)
    off = np.atleast_2d(offset)
    n_size = len(templates)
    tmpl = template_array(templates)
    sl = output_slices(n_size, n_heading)
    B = out.shape[0]
    rows = np.arange(B)
    sc = np.argmax(out[:, sl.size_cls], axis=1)
    sres = out[:, sl.size_res].reshape(B, n_size, 3)[rows, sc]
    size = np.maximum(tmpl[sc] * (1.0 + sres), 1e-3)
    hb = np.argmax(out[:, sl.head_cls], axis=1)
    heading = bin_center(hb, n_heading) + out[:, sl.head_res][rows, hb] * (math.pi / n_heading)
    center = off + out[:, sl.center]
    boxes = [Box3D(*center[i], *size[i], heading[i]) for i in range(B)]
    return boxes, sc
