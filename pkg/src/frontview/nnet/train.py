"""Optimiser, deterministic training loop and checkpoint files."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


class Adam:
    def __init__(self, params: dict, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        c = self.cfg
        lr = c.lr if lr is None else lr
        self.t += 1
        bc1 = 1 - c.beta1 ** self.t
        bc2 = 1 - c.beta2 ** self.t
        for k in sorted(params):
            g = grads.get(k)
            if g is None:
                continue
            if c.weight_decay:
                g = g + c.weight_decay * params[k]
            self.m[k] = c.beta1 * self.m[k] + (1 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1 - c.beta2) * g * g
            params[k] -= lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)


@dataclass
class TrainConfig:
    steps: int = 500
    batch_size: int = 8
    micro_batch: int = 4
    workers: int = 1
    adam: AdamConfig = field(default_factory=AdamConfig)
    lr_decay_at: tuple = ()  # fractions of ``steps`` where lr is divided by 10
    log_every: int = 50

    def lr_at(self, step: int) -> float:
        lr = self.adam.lr
        for frac in self.lr_decay_at:
            if step >= int(frac * self.steps):
                lr *= 0.1
        return lr


@dataclass
class TraceRow:
    step: int
    total: float
    components: dict


@dataclass
class TrainResult:
    params: dict
    trace: list = field(default_factory=list)

    def losses(self) -> np.ndarray:
        return np.array([r.total for r in self.trace])


# A loss function takes (params, samples) and returns
# (sum of per-sample losses, dict of summed components, grads of the sum).
LossFn = Callable[[dict, Sequence], tuple]


def _sum_in_order(parts: list[dict]) -> dict:
    out = {k: v.copy() for k, v in parts[0].items()}
    for p in parts[1:]:
        for k, v in p.items():
            if k in out:
                out[k] += v
            else:
                out[k] = v.copy()
    return out


def train(params: dict, dataset: Sequence, loss_fn: LossFn, cfg: TrainConfig, seed: int = 0,
          callback: Callable | None = None) -> TrainResult:
    """Mini-batch Adam on ``loss_fn``.

    Batches are drawn from seeded per-epoch permutations. Each batch is cut
    into micro-batches of fixed size whose gradients are summed in
    micro-batch order, so results do not depend on ``cfg.workers``.
    """
    rng = np.random.default_rng(seed)
    opt = Adam(params, cfg.adam)
    trace: list[TraceRow] = []
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    order = rng.permutation(n)
    pos = 0
    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for step in range(cfg.steps):
            idx = []
            while len(idx) < min(cfg.batch_size, n):
                if pos == n:
                    order = rng.permutation(n)
                    pos = 0
                idx.append(int(order[pos]))
                pos += 1
            batch = [dataset[i] for i in idx]
            chunks = [batch[i:i + cfg.micro_batch] for i in range(0, len(batch), cfg.micro_batch)]
            if pool is not None:
                results = list(pool.map(lambda c: loss_fn(params, c), chunks))
            else:
                results = [loss_fn(params, c) for c in chunks]
            total = 0.0
            comps: dict = {}
            for loss, cp, _ in results:
                total += loss
                for k, v in cp.items():
                    comps[k] = comps.get(k, 0.0) + v
            grads = _sum_in_order([r[2] for r in results])
            B = len(batch)
            total /= B
            comps = {k: v / B for k, v in comps.items()}
            for k in grads:
                grads[k] /= B
            if not math.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingDivergedError(f"non-finite loss at step {step}: total={total}, components={comps}")
            trace.append(TraceRow(step, total, comps))
            opt.step(params, grads, cfg.lr_at(step))
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d loss %.5f %s", step, total, {k: round(v, 4) for k, v in comps.items()})
            if callback is not None:
                callback(step, total, comps)
    finally:
        if pool is not None:
            pool.shutdown()
    return TrainResult(params, trace)


def write_trace(path, trace: Sequence[TraceRow]) -> None:
    keys = sorted({k for r in trace for k in r.components})
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "total", *keys])
        for r in trace:
            w.writerow([r.step, repr(r.total), *(repr(r.components.get(k, 0.0)) for k in keys)])


def save_checkpoint(path, params: dict, meta: dict) -> None:
    """Flat little-endian float64 file plus a JSON sidecar ``<path>.json`` with names, shapes and offsets."""
    path = Path(path)
    layout = []
    offset = 0
    with open(path, "wb") as f:
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f8")
            f.write(arr.tobytes())
            layout.append({"name": name, "shape": list(arr.shape), "offset": offset})
            offset += arr.size
    side = dict(meta)
    side["tensors"] = layout
    side["count"] = offset
    Path(str(path) + ".json").write_text(json.dumps(side, indent=1))


def load_checkpoint(path) -> tuple[dict, dict]:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    flat = np.fromfile(path, dtype="<f8")
    if flat.size != meta["count"]:
        raise ValueError(f"{path}: expected {meta['count']} values, found {flat.size}")
    params = {}
    for t in meta["tensors"]:
        n = int(np.prod(t["shape"])) if t["shape"] else 1
        params[t["name"]] = flat[t["offset"]:t["offset"] + n].reshape(t["shape"]).astype(np.float64)
    return params, meta
