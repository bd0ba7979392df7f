"""Recurrent air-column estimator: network, losses, training and the sklearn wrapper."""
from . import checkpoint
from .estimator import MPNetRegressor, check_clips, check_targets
from .losses import DEFAULT_ALPHA, loss_height, loss_mono, loss_total
from .network import (HIDDEN, VARIANTS, ModelParams, PredictionTrace, forward, init_params,
                      predict_batch, select_rows, variants, zero_params)
from .training import TrainConfig, TrainingDiverged, gradients, train, train_arrays

__all__ = [
    "DEFAULT_ALPHA", "HIDDEN", "MPNetRegressor", "VARIANTS", "ModelParams", "PredictionTrace",
    "TrainConfig", "TrainingDiverged", "check_clips", "check_targets", "checkpoint", "forward",
    "gradients", "init_params", "loss_height", "loss_mono", "loss_total", "predict_batch",
    "select_rows", "train", "train_arrays", "variants", "zero_params",
]
