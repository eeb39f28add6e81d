"""Reconstruction models: the hybrid attention/decoder network, a plain
convolutional baseline, training, and checkpointing."""

from .config import LOSS_KINDS, TrainConfig, TrustConfig, UnetConfig
from .forward import forward_trust, forward_unet, patchify, token_gram
from .losses import loss
from .params import (
    TRUST,
    UNET,
    checkpoint_load,
    checkpoint_save,
    config_from_manifest,
    flop_estimate,
    init_params,
    param_count,
    param_shapes,
)
from .train import Adam, EpochRow, TrainResult, evaluate, train

__all__ = [
    "Adam",
    "EpochRow",
    "LOSS_KINDS",
    "TRUST",
    "TrainConfig",
    "TrainResult",
    "TrustConfig",
    "UNET",
    "UnetConfig",
    "checkpoint_load",
    "checkpoint_save",
    "config_from_manifest",
    "evaluate",
    "flop_estimate",
    "forward_trust",
    "forward_unet",
    "init_params",
    "loss",
    "param_count",
    "param_shapes",
    "patchify",
    "token_gram",
    "train",
]
