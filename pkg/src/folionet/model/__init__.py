"""Allocation network: configuration, layers, loss, training, prediction."""

from .config import ModelConfig, SEARCH_DOMAINS, load_preset
from .loss import LossInputs, VARIANCE_FLOOR, next_day_returns, sharpe_loss, trailing_covariance
from .network import (ModelParams, forward, gat_layer, gat_stack, head_scores, init_params,
                      lstm_forward, normalize_weights)
from .training import (AdamState, EpochStats, PredictResult, TrainedModel, adam_step,
                       eligible_training_dates, load_checkpoint, predict_weights,
                       save_checkpoint, train)

__all__ = [
    "AdamState", "EpochStats", "LossInputs", "ModelConfig", "ModelParams", "PredictResult",
    "SEARCH_DOMAINS", "TrainedModel", "VARIANCE_FLOOR", "adam_step", "eligible_training_dates",
    "forward", "gat_layer", "gat_stack", "head_scores", "init_params", "load_checkpoint",
    "load_preset", "lstm_forward", "next_day_returns", "normalize_weights", "predict_weights",
    "save_checkpoint", "sharpe_loss", "train", "trailing_covariance",
]
