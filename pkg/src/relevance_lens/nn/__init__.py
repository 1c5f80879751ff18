"""Minimal feed-forward CNN engine."""

from .layers import Conv2D, Dense, Flatten, MaxPool2D, ReLU
from .model import ActivationTrace, LayerRecord, Model, backward, classify, forward
from .modelfile import load_model, model_from_bytes, model_to_bytes, save_model

__all__ = [
    "Conv2D",
    "Dense",
    "Flatten",
    "MaxPool2D",
    "ReLU",
    "Model",
    "LayerRecord",
    "ActivationTrace",
    "forward",
    "backward",
    "classify",
    "load_model",
    "save_model",
    "model_to_bytes",
    "model_from_bytes",
]
