"""Sufficient Posterior Representation dynamic models.

Deterministic filtering states learned with per-timestep initialization,
backprop-through-time conditional training and stochastic mixing, plus
linear-AR and Gaussian-HMM baselines and a multi-horizon evaluation harness.
"""
from ._accel import backend
from .datasets import (DatasetBundle, GeneratorSpec, Sequence, generate, load_sequences,
                       normalize, save_sequences, split)
from .errors import SprError
from .evaluation import compare, evaluate, load_model, save_model
from .model import SprParams, State, filter, predict_horizon
from .training import TrainConfig, TrainReport, train_full

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle", "GeneratorSpec", "Sequence", "SprError", "SprParams", "State",
    "TrainConfig", "TrainReport", "backend", "compare", "evaluate", "filter", "generate",
    "load_model", "load_sequences", "normalize", "predict_horizon", "save_model",
    "save_sequences", "split", "train_full",
]
