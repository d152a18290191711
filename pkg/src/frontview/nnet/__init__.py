from .layers import Conv2D, Dense, LeakyReLU, MaxPoolPoints, ResidualBlock, ResidualUnit, Upsample2x
from .penet import PENet, PENetConfig, SizeTemplate, corner_loss, stage2_loss
from .pgnet import PGNet, PGNetConfig
from .train import Adam, AdamConfig, TrainConfig, train

__all__ = [
    "Adam", "AdamConfig", "Conv2D", "Dense", "LeakyReLU", "MaxPoolPoints", "PENet", "PENetConfig",
    "PGNet", "PGNetConfig", "ResidualBlock", "ResidualUnit", "SizeTemplate", "TrainConfig",
    "Upsample2x", "corner_loss", "stage2_loss", "train",
]
