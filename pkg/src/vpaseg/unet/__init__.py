from .model import ShapeError, UNetConfig, UNetModel, block_channels, loss_mse
from .optim import AdamState, NoGradientsError, adam_step

__all__ = [
    "AdamState",
    "NoGradientsError",
    "ShapeError",
    "UNetConfig",
    "UNetModel",
    "adam_step",
    "block_channels",
    "loss_mse",
]
