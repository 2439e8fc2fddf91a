"""Intensity-weighted fusion of frame features and the linear classifier.

Per-frame importance weights come from the learned adjacency matrix:
column means (how much each frame influences the others) through a
softmax.  The adjacency matrix is detached in this branch so the weights
never feed gradients back into it; graph learning alone shapes it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, parameter
from .errors import ConfigError, ShapeError
from .graph import glorot

__all__ = [
    "ClassifierParams",
    "init_classifier",
    "intensity_weights",
    "weighted_fusion",
    "classify",
]


@dataclass
class ClassifierParams:
    weight: Tensor  # K x d
    bias: Tensor  # 1 x K


def init_classifier(n_classes: int, dim: int, rng: np.random.Generator) -> ClassifierParams:
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")
    return ClassifierParams(
        weight=parameter(glorot(rng, n_classes, dim)),
        bias=parameter(np.zeros((1, n_classes))),
    )


def intensity_weights(tape: Tape, adjacency: Tensor, mean_axis: str = "column") -> Tensor:
    """Per-frame importance weights: softmax of adjacency column means.

    The adjacency matrix passes through stop_gradient first, so this
    branch contributes exactly zero to its gradient.  ``mean_axis="row"``
    pools each row instead (sensitivity variant).
    """
    n, m = adjacency.values.shape
    if n != m:
        raise ShapeError(f"adjacency must be square, got {adjacency.values.shape}")
    frozen = tape.stop_gradient(adjacency)
    if mean_axis == "column":
        means = tape.mean_over_rows(frozen)
    elif mean_axis == "row":
        means = tape.mean_over_rows(tape.transpose(frozen))
    else:
        raise ConfigError(f"mean_axis must be 'column' or 'row', got '{mean_axis}'")
    return tape.softmax_vector(means)


def weighted_fusion(tape: Tape, features: Tensor, weights: Tensor) -> Tensor:
    """Fuse N frame features into one vector: the weighted sum of rows."""
    n = features.values.shape[0]
    if weights.values.shape != (1, n):
        raise ShapeError(
            f"need one weight per frame: features have {n} rows, "
            f"weights are {weights.values.shape}"
        )
    return tape.matmul(weights, features)


def classify(tape: Tape, fused: Tensor, params: ClassifierParams) -> Tensor:
    """Linear logits over the fused representation: fused @ W.T + bias."""
    if fused.values.shape[0] != 1:
        raise ShapeError(f"fused representation must be a row, got {fused.values.shape}")
    logits = tape.matmul(fused, tape.transpose(params.weight))
    return tape.add_row(logits, params.bias)
