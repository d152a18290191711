"""Proposal network: residual backbone with a small feature pyramid and three heads."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..proposal import N_BOX, N_DIST
from .layers import Conv2D, LeakyReLU, ResidualBlock, Sequential, Upsample2x, conv_act

PRIOR_CONF_BIAS = -4.0


@dataclass(frozen=True)
class PGNetConfig:
    in_channels: int = 3
    widths: tuple = (8, 16, 32, 64)
    skips: tuple = (2, 4, 4, 2)
    strides: tuple = (4, 8, 16)
    priors_per_scale: tuple = (3, 3, 3)
    n_class: int = 2
    slope: float = 0.1

    def __post_init__(self):
        if len(self.widths) != 4 or len(self.skips) != 4:
            raise ValueError("the backbone has exactly four residual stages")
        if len(self.strides) != len(self.priors_per_scale):
            raise ValueError("one prior count per output stride is required")
        if not set(self.strides) <= {4, 8, 16}:
            raise ValueError("output strides must be drawn from 4, 8 and 16")

    @property
    def fields_per_prior(self) -> int:
        return N_BOX + N_DIST + 1 + self.n_class

    def head_channels(self, stride: int) -> int:
        return self.priors_per_scale[self.strides.index(stride)] * self.fields_per_prior

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "PGNetConfig":
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


def _crop_to(x, h, w):
    return x[:, :h, :w, :]


def _pad_to(dx, shape):
    if dx.shape == tuple(shape):
        return dx
    out = np.zeros(shape)
    out[:, :dx.shape[1], :dx.shape[2], :] = dx
    return out


class PGNet:
    """Backbone stages at strides 2, 4, 8, 16; heads at the configured strides.

    Layout: the stride-16 branch runs a 1x1/3x3 neck then a linear 1x1 head.
    Each finer scale upsamples a 1x1-reduced copy of the coarser neck,
    concatenates it with the backbone stage of matching stride, and runs its
    own neck and head. Head channels per prior follow
    ``[t_x, t_y, t_w, t_h, t_r1, t_r2, conf, class...]``.
    """

    def __init__(self, cfg: PGNetConfig = PGNetConfig()):
        self.cfg = cfg
        w, s = cfg.widths, cfg.skips
        self.stages = [ResidualBlock(f"stage{i}", cfg.in_channels if i == 0 else w[i - 1], w[i], s[i], cfg.slope)
                       for i in range(4)]
        need = sorted(cfg.strides, reverse=True)
        finest = min(need)
        # stride -> backbone width at that stride
        bw = {4: w[1], 8: w[2], 16: w[3]}
        self.necks, self.heads, self.reduce = {}, {}, {}
        prev = None
        for st in (16, 8, 4):
            if st < finest:
                break
            cin = bw[st] if prev is None else bw[st] + max(bw[prev] // 4, 1)
            mid = max(bw[st] // 2, 1)
            self.necks[st] = Sequential([*conv_act(f"neck{st}.a", cin, mid, 1, 1, cfg.slope).layers,
                                         *conv_act(f"neck{st}.b", mid, bw[st], 3, 1, cfg.slope).layers])
            if st in cfg.strides:
                self.heads[st] = Conv2D(f"head{st}", bw[st], cfg.head_channels(st), 1, 1, gain=0.1)
            if st > finest:
                self.reduce[st] = Sequential([*conv_act(f"reduce{st}", bw[st], max(bw[st] // 4, 1), 1, 1,
                                                        cfg.slope).layers, Upsample2x()])
            prev = st

    def set_input_grad(self, enabled: bool) -> None:
        """Training never needs the gradient of the input map; skipping it saves the costliest scatter."""
        self.stages[0].layers[0].skip_input_grad = not enabled

    def modules(self):
        yield from self.stages
        for d in (self.necks, self.heads, self.reduce):
            yield from d.values()

    def param_shapes(self) -> dict:
        out = {}
        for m in self.modules():
            out.update(m.param_shapes())
        return out

    def init(self, rng: np.random.Generator) -> dict:
        params: dict = {}
        for m in self.modules():
            m.init(params, rng)
        nf = self.cfg.fields_per_prior
        for st in self.heads:
            b = params[f"head{st}.b"]
            b[6::nf] = PRIOR_CONF_BIAS
        return params

    def forward(self, params: dict, x: np.ndarray):
        """``x``: ``(B, H, W, C)`` or ``(H, W, C)``. Returns heads ordered like ``cfg.strides`` and a cache."""
        squeeze = x.ndim == 3
        if squeeze:
            x = x[None]
        if x.shape[-1] != self.cfg.in_channels:
            raise ValueError(f"expected {self.cfg.in_channels} input channels, got {x.shape[-1]}")
        cache = {"squeeze": squeeze}
        feats = {}
        h = x
        for i, stage in enumerate(self.stages):
            h, cache[f"stage{i}"] = stage.forward(params, h)
            feats[2 ** (i + 1)] = h
        outs = {}
        carry = None
        for st in sorted(self.necks, reverse=True):
            inp = feats[st]
            if carry is not None:
                carry = _crop_to(carry, inp.shape[1], inp.shape[2])
                cache[f"cat{st}"] = (inp.shape[-1], carry.shape)
                inp = np.concatenate([inp, carry], axis=-1)
            n, cache[f"neck{st}"] = self.necks[st].forward(params, inp)
            if st in self.heads:
                outs[st], cache[f"head{st}"] = self.heads[st].forward(params, n)
            if st in self.reduce:
                carry, cache[f"reduce{st}"] = self.reduce[st].forward(params, n)
                cache[f"reduce_shape{st}"] = carry.shape
        heads = [outs[st][0] if squeeze else outs[st] for st in self.cfg.strides]
        return heads, cache

    def backward(self, params: dict, cache: dict, dheads, grads: dict):
        squeeze = cache["squeeze"]
        dheads = {st: (d[None] if squeeze else d) for st, d in zip(self.cfg.strides, dheads)}
        dfeats = {}
        dcarry = None
        for st in sorted(self.necks):
            dn = None
            if st in self.heads:
                dn = self.heads[st].backward(params, cache[f"head{st}"], dheads[st], grads)
            if st in self.reduce:
                dr = _pad_to(dcarry, cache[f"reduce_shape{st}"])
                d = self.reduce[st].backward(params, cache[f"reduce{st}"], dr, grads)
                dn = d if dn is None else dn + d
            dinp = self.necks[st].backward(params, cache[f"neck{st}"], dn, grads)
            if f"cat{st}" in cache:
                c_feat, carry_shape = cache[f"cat{st}"]
                dfeats[st] = dinp[..., :c_feat]
                dcarry = dinp[..., c_feat:]
            else:
                dfeats[st] = dinp
                dcarry = None
        dh = None
        for i in reversed(range(4)):
            st = 2 ** (i + 1)
            if st in dfeats:
                dh = dfeats[st] if dh is None else dh + dfeats[st]
            if dh is None:
                continue
            dh = self.stages[i].backward(params, cache[f"stage{i}"], dh, grads)
        if dh is None:
            return None
        return dh[0] if squeeze else dh


def pgnet_forward(params: dict, x: np.ndarray, cfg: PGNetConfig = PGNetConfig()):
    return PGNet(cfg).forward(params, x)[0]
