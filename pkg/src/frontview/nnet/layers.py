"""Layers with hand-written backward passes.

Tensors are float64 numpy arrays in row-major order; images use NHWC and
point sets ``(B, n, C)``. Every layer is stateless: ``forward(params, x)``
returns ``(y, cache)`` and ``backward(params, cache, dy, grads)`` returns
``dx`` while accumulating parameter gradients into ``grads``. Keeping the
cache outside the layer makes concurrent forward passes safe.

Set ``FRONTVIEW_DEBUG=1`` to raise on any non-finite activation or gradient.
"""
from __future__ import annotations

import math
import os

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEBUG = os.environ.get("FRONTVIEW_DEBUG", "") not in ("", "0")


class NonFiniteError(FloatingPointError):
    pass


def check_finite(x: np.ndarray, where: str) -> np.ndarray:
    if DEBUG and not np.all(np.isfinite(x)):
        raise NonFiniteError(f"non-finite values in {where}")
    return x


def he_uniform(rng: np.random.Generator, shape, fan_in: int, gain: float = 1.0) -> np.ndarray:
    bound = gain * math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    name = ""

    def param_shapes(self) -> dict:
        return {}

    def init(self, params: dict, rng: np.random.Generator) -> None:
        pass

    def forward(self, params, x):
        raise NotImplementedError

    def backward(self, params, cache, dy, grads):
        raise NotImplementedError


def _accum(grads: dict, key: str, g: np.ndarray) -> None:
    if key in grads:
        grads[key] += g
    else:
        grads[key] = g.copy()


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


class Conv2D(Layer):
    """Cross-correlation with 'same' zero padding; output is ``ceil(H/s) x ceil(W/s)``."""

    def __init__(self, name: str, cin: int, cout: int, k: int = 3, stride: int = 1, gain: float = 1.0):
        if stride not in (1, 2):
            raise ValueError("stride must be 1 or 2")
        self.name, self.cin, self.cout, self.k, self.stride, self.gain = name, cin, cout, k, stride, gain
        # set on a network's first layer when the input gradient is never needed
        self.skip_input_grad = False

    def param_shapes(self):
        return {self.name + ".w": (self.k, self.k, self.cin, self.cout), self.name + ".b": (self.cout,)}

    def init(self, params, rng):
        params[self.name + ".w"] = he_uniform(rng, (self.k, self.k, self.cin, self.cout),
                                              self.k * self.k * self.cin, self.gain)
        params[self.name + ".b"] = np.zeros(self.cout)

    def forward(self, params, x):
        B, H, W, C = x.shape
        if C != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} input channels, got {C}")
        w = params[self.name + ".w"]
        b = params[self.name + ".b"]
        k, s = self.k, self.stride
        Ho, pt, pb = same_padding(H, k, s)
        Wo, pl, pr = same_padding(W, k, s)
        if k == 1 and s == 1:
            cols = x.reshape(-1, C)
        else:
            xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0))) if (pt or pb or pl or pr) else x
            xp = np.ascontiguousarray(xp)
            st = xp.strides
            win = as_strided(xp, shape=(B, Ho, Wo, k, k, C),
                             strides=(st[0], st[1] * s, st[2] * s, st[1], st[2], st[3]), writeable=False)
            cols = win.reshape(B * Ho * Wo, k * k * C)
        y = cols @ w.reshape(-1, self.cout) + b
        y = check_finite(y.reshape(B, Ho, Wo, self.cout), self.name)
        return y, (cols, x.shape, (Ho, Wo, pt, pb, pl, pr))

    def backward(self, params, cache, dy, grads):
        cols, xshape, (Ho, Wo, pt, pb, pl, pr) = cache
        B, H, W, C = xshape
        k, s = self.k, self.stride
        w = params[self.name + ".w"]
        d2 = dy.reshape(-1, self.cout)
        _accum(grads, self.name + ".w", (cols.T @ d2).reshape(w.shape))
        _accum(grads, self.name + ".b", d2.sum(axis=0))
        if self.skip_input_grad:
            return None
        if k == 1 and s == 1:
            dx = d2 @ w.reshape(-1, self.cout).T
            return check_finite(dx.reshape(xshape), self.name + " backward")
        dxp = np.zeros((B, H + pt + pb, W + pl + pr, C))
        for i in range(k):
            for j in range(k):
                part = (d2 @ w[i, j].T).reshape(B, Ho, Wo, C)
                dxp[:, i:i + s * Ho:s, j:j + s * Wo:s, :] += part
        dx = dxp[:, pt:pt + H, pl:pl + W, :]
        return check_finite(np.ascontiguousarray(dx), self.name + " backward")


class Dense(Layer):
    """Affine map over the last axis; applied per point it is a shared MLP layer."""

    def __init__(self, name: str, cin: int, cout: int, gain: float = 1.0):
        self.name, self.cin, self.cout, self.gain = name, cin, cout, gain

    def param_shapes(self):
        return {self.name + ".w": (self.cin, self.cout), self.name + ".b": (self.cout,)}

    def init(self, params, rng):
        params[self.name + ".w"] = he_uniform(rng, (self.cin, self.cout), self.cin, self.gain)
        params[self.name + ".b"] = np.zeros(self.cout)

    def forward(self, params, x):
        if x.shape[-1] != self.cin:
            raise ValueError(f"{self.name}: expected {self.cin} features, got {x.shape[-1]}")
        y = x @ params[self.name + ".w"] + params[self.name + ".b"]
        return check_finite(y, self.name), x

    def backward(self, params, cache, dy, grads):
        x = cache
        x2 = x.reshape(-1, self.cin)
        d2 = dy.reshape(-1, self.cout)
        _accum(grads, self.name + ".w", x2.T @ d2)
        _accum(grads, self.name + ".b", d2.sum(axis=0))
        return (d2 @ params[self.name + ".w"].T).reshape(x.shape)


class LeakyReLU(Layer):
    def __init__(self, slope: float = 0.1):
        self.slope = slope

    def forward(self, params, x):
        pos = x > 0
        return np.where(pos, x, self.slope * x), pos

    def backward(self, params, cache, dy, grads):
        return np.where(cache, dy, self.slope * dy)


def leaky_relu(x, slope: float = 0.1):
    return np.maximum(x, slope * x) if slope <= 1 else np.minimum(x, slope * x)


def leaky_relu_grad(x, slope: float = 0.1):
    return np.where(x > 0, 1.0, slope)


class Upsample2x(Layer):
    """Nearest-neighbour doubling of H and W."""

    def forward(self, params, x):
        return x.repeat(2, axis=1).repeat(2, axis=2), x.shape

    def backward(self, params, cache, dy, grads):
        B, H, W, C = cache
        return dy.reshape(B, H, 2, W, 2, C).sum(axis=(2, 4))


class MaxPoolPoints(Layer):
    """Max over the point axis of a ``(B, n, C)`` tensor."""

    def forward(self, params, x):
        arg = np.argmax(x, axis=1)
        y = np.take_along_axis(x, arg[:, None, :], axis=1)[:, 0, :]
        return y, (arg, x.shape)

    def backward(self, params, cache, dy, grads):
        arg, shape = cache
        dx = np.zeros(shape)
        np.put_along_axis(dx, arg[:, None, :], dy[:, None, :], axis=1)
        return dx


class Sequential(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def param_shapes(self):
        out = {}
        for layer in self.layers:
            out.update(layer.param_shapes())
        return out

    def init(self, params, rng):
        for layer in self.layers:
            layer.init(params, rng)

    def forward(self, params, x):
        caches = []
        for layer in self.layers:
            x, c = layer.forward(params, x)
            caches.append(c)
        return x, caches

    def backward(self, params, cache, dy, grads):
        for layer, c in zip(reversed(self.layers), reversed(cache)):
            dy = layer.backward(params, c, dy, grads)
        return dy


def conv_act(name, cin, cout, k=3, stride=1, slope=0.1, gain=1.0) -> Sequential:
    return Sequential([Conv2D(name, cin, cout, k, stride, gain), LeakyReLU(slope)])


def mlp(prefix: str, widths, slope: float = 0.1, last_linear: bool = False) -> Sequential:
    layers = []
    for i in range(len(widths) - 1):
        layers.append(Dense(f"{prefix}.{i}", widths[i], widths[i + 1]))
        if not (last_linear and i == len(widths) - 2):
            layers.append(LeakyReLU(slope))
    return Sequential(layers)


class ResidualUnit(Layer):
    """``x + F(x)`` with ``F`` a 1x1 bottleneck then a 3x3 convolution, each followed by leaky ReLU."""

    def __init__(self, name: str, channels: int, mid: int | None = None, slope: float = 0.1,
                 residual_gain: float = 0.5):
        mid = mid or max(channels // 2, 1)
        self.body = Sequential([
            Conv2D(name + ".a", channels, mid, 1, 1), LeakyReLU(slope),
            Conv2D(name + ".b", mid, channels, 3, 1, gain=residual_gain), LeakyReLU(slope),
        ])

    def param_shapes(self):
        return self.body.param_shapes()

    def init(self, params, rng):
        self.body.init(params, rng)

    def forward(self, params, x):
        f, c = self.body.forward(params, x)
        return x + f, c

    def backward(self, params, cache, dy, grads):
        return dy + self.body.backward(params, cache, dy, grads)


class ResidualBlock(Sequential):
    """Stride-2 entry convolution followed by ``n_units`` skip-connected units."""

    def __init__(self, name: str, cin: int, cout: int, n_units: int, slope: float = 0.1, mid: int | None = None):
        layers = [Conv2D(name + ".entry", cin, cout, 3, 2), LeakyReLU(slope)]
        layers += [ResidualUnit(f"{name}.u{i}", cout, mid, slope) for i in range(n_units)]
        super().__init__(layers)


def residual_block(params, x, block: ResidualBlock):
    """Functional forward of a residual block, returning only the output."""
    return block.forward(params, x)[0]


def upsample2x_nearest(x: np.ndarray) -> np.ndarray:
    return Upsample2x().forward({}, x)[0]


def conv2d(x: np.ndarray, w: np.ndarray, b: np.ndarray | None = None, stride: int = 1) -> np.ndarray:
    """Functional 'same' convolution of an ``(H, W, C)`` or ``(B, H, W, C)`` tensor."""
    squeeze = x.ndim == 3
    xb = x[None] if squeeze else x
    k, _, cin, cout = w.shape
    layer = Conv2D("conv", cin, cout, k, stride)
    y, _ = layer.forward({"conv.w": w, "conv.b": np.zeros(cout) if b is None else b}, xb)
    return y[0] if squeeze else y
