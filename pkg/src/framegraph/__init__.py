"""Graph convolution over video-frame features with a learnable shared
adjacency matrix, a bidirectional recurrent layer, and adjacency-derived
weighted feature fusion — plus the autodiff engine, synthetic data, and
verification tooling that back it."""

from .autodiff import (
    SgdConfig,
    Tape,
    Tensor,
    backward,
    constant,
    parameter,
    sgd_step,
)
from .data import Dataset, SequenceSample, SyntheticSpec, make_dataset, make_sample
from .estimator import FrameGraphClassifier
from .model import ModelConfig, ModelParams, init_model, model_forward

__version__ = "0.1.0"

__all__ = [
    "SgdConfig",
    "Tape",
    "Tensor",
    "backward",
    "constant",
    "parameter",
    "sgd_step",
    "Dataset",
    "SequenceSample",
    "SyntheticSpec",
    "make_dataset",
    "make_sample",
    "FrameGraphClassifier",
    "ModelConfig",
    "ModelParams",
    "init_model",
    "model_forward",
    "__version__",
]
