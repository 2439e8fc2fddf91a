"""Scikit-learn style estimator facade over the full model.

``FrameGraphClassifier`` fits the encoder + graph-module + fusion pipeline
on labelled videos with plain SGD and exposes the usual fit / predict /
predict_proba / score surface, so it composes with model selection
utilities such as ``cross_val_score``.  X is a 4-D array of sequences,
(n_samples, n_frames, rows, cols), with pixels in [0, 1].
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .autodiff import Tape
from .model import ModelConfig, init_model, model_forward
from .train import fit_arrays
from .validation import check_image_sequences, check_labels

__all__ = ["FrameGraphClassifier"]


class FrameGraphClassifier(ClassifierMixin, BaseEstimator):
    """Video-sequence classifier with graph convolution over frame features.

    Parameters mirror the training configuration: architecture width,
    number of stacked graph modules, whether adjacency-derived weighted
    fusion feeds the classifier, and the SGD settings.
    """

    def __init__(
        self,
        feature_dim=32,
        module_count=2,
        use_weighted_fusion=True,
        fusion_mean_axis="column",
        epochs=40,
        learning_rate=0.001,
        weight_decay=0.00005,
        batch_size=8,
        seed=0,
        conv_channels=(4, 8),
    ):
        self.feature_dim = feature_dim
        self.module_count = module_count
        self.use_weighted_fusion = use_weighted_fusion
        self.fusion_mean_axis = fusion_mean_axis
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.seed = seed
        self.conv_channels = conv_channels

    def fit(self, X, y):
        X = check_image_sequences(X)
        y_idx, classes = check_labels(y, X.shape[0])
        config = ModelConfig(
            n_frames=X.shape[1],
            frame_rows=X.shape[2],
            frame_cols=X.shape[3],
            n_classes=int(classes.size),
            feature_dim=self.feature_dim,
            module_count=self.module_count,
            use_weighted_fusion=self.use_weighted_fusion,
            fusion_mean_axis=self.fusion_mean_axis,
            conv_channels=tuple(self.conv_channels),
        )
        self.classes_ = classes
        self.model_ = init_model(config, self.seed)
        self.history_ = fit_arrays(
            self.model_,
            X,
            y_idx,
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            batch_size=self.batch_size,
            seed=self.seed,
        )
        return self

    def _check_is_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError(
                "This FrameGraphClassifier instance is not fitted yet; call fit first."
            )

    def _logits(self, X) -> np.ndarray:
        self._check_is_fitted()
        X = check_image_sequences(X)
        cfg = self.model_.config
        if X.shape[1:] != (cfg.n_frames, cfg.frame_rows, cfg.frame_cols):
            raise ValueError(
                f"model was fitted on sequences of shape "
                f"({cfg.n_frames}, {cfg.frame_rows}, {cfg.frame_cols}), got {X.shape[1:]}"
            )
        tape = Tape(record=False)
        return np.vstack(
            [model_forward(tape, sample, self.model_).logits.values for sample in X]
        )

    def predict_proba(self, X) -> np.ndarray:
        logits = self._logits(X)
        shifted = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X) -> np.ndarray:
        logits = self._logits(X)
        return self.classes_[np.argmax(logits, axis=1)]
