"""Pipeline constants as one JSON document, overridable by file or environment."""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path
from typing import Optional

from .fvproj import ProjectionConfig
from .nnet.penet import PENetConfig
from .nnet.pgnet import PGNetConfig
from .nnet.train import AdamConfig, TrainConfig
from .pipeline import CropConfig, DetectConfig
from .proposal import LossWeights

ENV_VAR = "FRONTVIEW_CONFIG"

DEFAULTS: dict = {
    "projection": ProjectionConfig().to_dict(),
    "proposal": {
        "n_anchors": 9,
        "ignore_iou": 0.5,
        "nms_iou": 0.45,
        "score_threshold": 0.1,
        "lambda_coord": 1.0,
        "lambda_conf": 1.0,
        "lambda_cls": 1.0,
        "lambda_reg": 1.0,
        "huber_delta": 1.0,
        "min_support": 1,
    },
    "pgnet": PGNetConfig().to_dict(),
    "penet": PENetConfig().to_dict(),
    "frustum": {"n_points": 512, "margin_px": 2.0, "margin_m": 0.5, "min_points": 5, "copies": 8},
    "train_pgnet": {"steps": 800, "batch_size": 4, "micro_batch": 4, "lr": 1e-3, "lr_decay_at": [0.8]},
    "train_penet": {"steps": 1000, "batch_size": 32, "micro_batch": 32, "lr": 1e-3, "lr_decay_at": [0.8]},
    "eval": {
        "n_points": 11,
        "iou_car": 0.7,
        "iou_person": 0.5,
        # camera focal length (px) over map rows per radian: map box heights to image-equivalent pixels
        "map_height_scale": 2.6365,
    },
    "workers": 1,
}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path: Optional[str] = None) -> dict:
    """Defaults, overridden by ``path`` or else by the file named in ``$FRONTVIEW_CONFIG``."""
    path = path or os.environ.get(ENV_VAR)
    if not path:
        return copy.deepcopy(DEFAULTS)
    return merge(DEFAULTS, json.loads(Path(path).read_text()))


def projection_config(cfg: dict) -> ProjectionConfig:
    return ProjectionConfig.from_dict(cfg["projection"])


def loss_weights(cfg: dict) -> LossWeights:
    p = cfg["proposal"]
    return LossWeights(p["lambda_coord"], p["lambda_conf"], p["lambda_cls"], p["lambda_reg"], p["huber_delta"])


def crop_config(cfg: dict) -> CropConfig:
    f = cfg["frustum"]
    return CropConfig(f["n_points"], f["margin_px"], f["margin_m"], f["min_points"])


def detect_config(cfg: dict) -> DetectConfig:
    p = cfg["proposal"]
    return DetectConfig(p["score_threshold"], p["nms_iou"], crop_config(cfg), p.get("min_support", 1))


def train_config(section: dict, workers: int = 1) -> TrainConfig:
    return TrainConfig(steps=section["steps"], batch_size=section["batch_size"], micro_batch=section["micro_batch"],
                       workers=workers, adam=AdamConfig(lr=section["lr"]),
                       lr_decay_at=tuple(section.get("lr_decay_at", ())), log_every=section.get("log_every", 50))
