"""Cross-modal reconstruction of SCG/GCG cycles from ear-sound cycles."""

from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import CardiacReconstructor
from .model import ModelConfig, ReconstructionModel, ReconstructionNet, build_model
from .training import (
    CalibrationConfig,
    TrainConfig,
    attention_weights,
    calibrate,
    forward,
    predict,
    reconstruct_session,
    train,
)

__all__ = [
    "CalibrationConfig",
    "CardiacReconstructor",
    "ModelConfig",
    "ReconstructionModel",
    "ReconstructionNet",
    "TrainConfig",
    "attention_weights",
    "build_model",
    "calibrate",
    "forward",
    "load_checkpoint",
    "predict",
    "reconstruct_session",
    "save_checkpoint",
    "train",
]
