"""Bi-temporal change detection with xLSTM enhancers.

Arrays are float64 numpy arrays in (N, C, H, W) layout; samples are
(img1, img2, mask, id) tuples.
"""

from ._core import (
    CheckpointError,
    ConfigError,
    DataError,
    Model,
    ShapeError,
    bce_loss,
    canonical_config,
    config_hash,
    dice_loss,
    grad_suite,
    load_pair_dir,
    metrics,
    mlstm_scan,
    synth,
    total_loss,
)

__all__ = [
    "CheckpointError",
    "ConfigError",
    "DataError",
    "Model",
    "ShapeError",
    "bce_loss",
    "canonical_config",
    "config_hash",
    "dice_loss",
    "grad_suite",
    "load_pair_dir",
    "metrics",
    "mlstm_scan",
    "synth",
    "total_loss",
]
