"""Makeup transfer and removal with symmetric semantic correspondence.

Everything runs on a small numpy autodiff core (:mod:`ssat.tensor`).
"""
from .correspondence import correlation, correspondence_visualization, soft_warp, sscft
from .estimator import MakeupTransfer
from .layers import NetWidths
from .losses import LossReport, LossWeights
from .network import InterpolationWeights, PartialMaskSet, SSATModel
from .trainer import TrainConfig, lr_schedule, train_loop

__version__ = "0.1.0"

__all__ = [
    "InterpolationWeights",
    "LossReport",
    "LossWeights",
    "MakeupTransfer",
    "NetWidths",
    "PartialMaskSet",
    "SSATModel",
    "TrainConfig",
    "correlation",
    "correspondence_visualization",
    "lr_schedule",
    "soft_warp",
    "sscft",
    "train_loop",
]
