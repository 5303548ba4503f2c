from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .layers import (
    Conv1d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool1d,
    ShapeError,
    out_length,
    softmax,
    softmax_cross_entropy,
)
from .model import DESK, PRESETS, FULL, Architecture, ConvBlock, Model, build_model
from .optim import Adam, NonFiniteGradient

__all__ = [
    "Adam",
    "Architecture",
    "CheckpointError",
    "Conv1d",
    "ConvBlock",
    "DESK",
    "Dense",
    "Dropout",
    "Flatten",
    "Layer",
    "MaxPool1d",
    "Model",
    "NonFiniteGradient",
    "PRESETS",
    "ShapeError",
    "FULL",
    "build_model",
    "load_checkpoint",
    "out_length",
    "save_checkpoint",
    "softmax",
    "softmax_cross_entropy",
]
