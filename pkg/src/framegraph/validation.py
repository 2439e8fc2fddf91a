"""Input validation helpers for the estimator and CLI boundaries."""

from __future__ import annotations

import numpy as np

from .errors import ShapeError

__all__ = ["check_image_sequences", "check_labels"]


def check_image_sequences(X) -> np.ndarray:
    """Coerce to a float64 array of shape (n_samples, n_frames, rows, cols)
    with finite pixel values in [0, 1]."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 4:
        raise ShapeError(
            f"X must have shape (n_samples, n_frames, rows, cols), got {arr.shape}"
        )
    if arr.shape[0] == 0:
        raise ValueError("X is empty")
    if not np.isfinite(arr).all():
        raise ValueError("X holds non-finite pixel values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError(
            f"pixel values must lie in [0, 1], got range "
            f"[{arr.min():.4g}, {arr.max():.4g}]"
        )
    return arr


def check_labels(y, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (class indices, sorted unique classes) for a label vector."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ShapeError(f"y must be 1-D, got shape {arr.shape}")
    if arr.shape[0] != n_samples:
        raise ShapeError(f"X has {n_samples} samples but y has {arr.shape[0]} labels")
    classes = np.unique(arr)
    if classes.size < 2:
        raise ValueError(f"need at least 2 classes in y, got {classes.size}")
    indices = np.searchsorted(classes, arr)
    return indices.astype(np.int64), classes
