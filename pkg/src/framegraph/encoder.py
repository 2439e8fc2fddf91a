"""Small convolutional encoder mapping grayscale frames to feature vectors.

Two conv + leaky-ReLU + 2x2 mean-pool stages followed by a linear
projection.  Frames are encoded with shared weights; internally all frames
of a sequence are laid out in one pixel-row matrix so each stage is a
single patch-gather and matmul.  Also home to the feature-file escape
hatch that lets callers bypass the encoder entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tape, Tensor, parameter
from .errors import ConfigError, ShapeError
from .graph import glorot

__all__ = [
    "ConvEncoderParams",
    "init_encoder",
    "encode_sequence",
    "load_features",
    "resample_frames",
]


@dataclass
class ConvEncoderParams:
    """Kernels are stored as matrices: row = (kernel offset, in-channel),
    column = out-channel, matching the patch layout of ``gather_rows``."""

    kernel1: Tensor  # (k*k) x c1
    bias1: Tensor  # 1 x c1
    kernel2: Tensor  # (k*k*c1) x c2
    bias2: Tensor  # 1 x c2
    projection: Tensor  # (rows/4 * cols/4 * c2) x d
    proj_bias: Tensor  # 1 x d
    rows: int = 16
    cols: int = 16
    kernel_size: int = 3
    channels: tuple[int, int] = (4, 8)
    feature_dim: int = 32
    slope: float = 0.2


def init_encoder(
    rows: int,
    cols: int,
    feature_dim: int,
    rng: np.random.Generator,
    channels: tuple[int, int] = (4, 8),
    kernel_size: int = 3,
    slope: float = 0.2,
    projection_gain: float = 4.0,
) -> ConvEncoderParams:
    if rows % 4 or cols % 4:
        raise ConfigError(
            f"frame size must be divisible by 4 for two pooling stages, got {rows}x{cols}"
        )
    if kernel_size % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {kernel_size}")
    c1, c2 = channels
    k2 = kernel_size * kernel_size
    flat = (rows // 4) * (cols // 4) * c2
    # Pixel inputs are sparse and in [0, 1]; the boosted projection keeps
    # feature variation of order one so downstream layers see signal.
    return ConvEncoderParams(
        kernel1=parameter(glorot(rng, k2, c1)),
        bias1=parameter(np.zeros((1, c1))),
        kernel2=parameter(glorot(rng, k2 * c1, c2)),
        bias2=parameter(np.zeros((1, c2))),
        projection=parameter(projection_gain * glorot(rng, flat, feature_dim)),
        proj_bias=parameter(np.zeros((1, feature_dim))),
        rows=rows,
        cols=cols,
        kernel_size=kernel_size,
        channels=channels,
        feature_dim=feature_dim,
        slope=slope,
    )


_INDEX_CACHE: dict[tuple, np.ndarray] = {}


def _conv_indices(n_frames: int, rows: int, cols: int, kernel_size: int) -> np.ndarray:
    """Same-padding patch indices per frame; -1 marks padded positions."""
    key = ("conv", n_frames, rows, cols, kernel_size)
    cached = _INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    off = kernel_size // 2
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    parts = []
    for dr in range(-off, off + 1):
        for dc in range(-off, off + 1):
            r2, c2 = rr + dr, cc + dc
            valid = (r2 >= 0) & (r2 < rows) & (c2 >= 0) & (c2 < cols)
            parts.append(np.where(valid, r2 * cols + c2, -1).ravel())
    per_frame = np.stack(parts, axis=1)
    frames = []
    for f in range(n_frames):
        shifted = per_frame.copy()
        shifted[shifted >= 0] += f * rows * cols
        frames.append(shifted)
    out = np.concatenate(frames, axis=0)
    _INDEX_CACHE[key] = out
    return out


def _pool_groups(n_frames: int, rows: int, cols: int) -> np.ndarray:
    """Row-index groups for 2x2 mean pooling of frame-stacked features."""
    key = ("pool", n_frames, rows, cols)
    cached = _INDEX_CACHE.get(key)
    if cached is not None:
        return cached
    r2, c2 = np.meshgrid(np.arange(rows // 2), np.arange(cols // 2), indexing="ij")
    base = 2 * r2 * cols + 2 * c2
    per_frame = np.stack(
        [base.ravel(), base.ravel() + 1, base.ravel() + cols, base.ravel() + cols + 1],
        axis=1,
    )
    frames = [per_frame + f * rows * cols for f in range(n_frames)]
    out = np.concatenate(frames, axis=0)
    _INDEX_CACHE[key] = out
    return out


def encode_sequence(tape: Tape, images: np.ndarray, params: ConvEncoderParams) -> Tensor:
    """Encode N frames into an N x d feature matrix, differentiably.

    ``images`` has shape (N, rows, cols); output row i is the feature
    vector of frame i.  Frames never mix: patch indices stay inside each
    frame's block of the stacked pixel matrix.
    """
    return encode_sequence_with_spatial(tape, images, params)[0]


def encode_sequence_with_spatial(
    tape: Tape, images: np.ndarray, params: ConvEncoderParams
) -> tuple[Tensor, Tensor]:
    """Like encode_sequence but also returns the pooled stage-2 activation
    map (one row per spatial cell, one column per channel) for heatmaps."""
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 3:
        raise ShapeError(f"images must be (frames, rows, cols), got shape {imgs.shape}")
    n, rows, cols = imgs.shape
    if n < 1:
        raise ShapeError("need at least one frame")
    if rows != params.rows or cols != params.cols:
        raise ShapeError(
            f"encoder built for {params.rows}x{params.cols} frames, got {rows}x{cols}"
        )
    k = params.kernel_size
    pixels = Tensor(imgs.reshape(-1, 1))

    h = tape.gather_rows(pixels, _conv_indices(n, rows, cols, k))
    h = tape.leaky_relu(tape.add_row(tape.matmul(h, params.kernel1), params.bias1), params.slope)
    h = tape.mean_pool_rows(h, _pool_groups(n, rows, cols))

    h = tape.gather_rows(h, _conv_indices(n, rows // 2, cols // 2, k))
    h = tape.leaky_relu(tape.add_row(tape.matmul(h, params.kernel2), params.bias2), params.slope)
    spatial = tape.mean_pool_rows(h, _pool_groups(n, rows // 2, cols // 2))

    flat_width = (rows // 4) * (cols // 4) * params.channels[1]
    flat = tape.reshape(spatial, n, flat_width)
    features = tape.add_row(tape.matmul(flat, params.projection), params.proj_bias)
    return features, spatial


def load_features(path, index: int = 0) -> np.ndarray:
    """Read one frame-feature sequence (N x d) from a feature container."""
    from .container import read_features

    records = read_features(path)
    if not 0 <= index < len(records):
        raise IndexError(f"feature record {index} out of range for {len(records)} records")
    return records[index].features


def resample_frames(features: np.ndarray, n_frames: int) -> np.ndarray:
    """Uniform chronological frame selection, repeating frames as needed.

    Maps an M-frame sequence onto exactly ``n_frames`` rows; used when
    ingesting external feature files whose frame count differs.
    """
    feats = np.asarray(features)
    m = feats.shape[0]
    if m < 1:
        raise ShapeError("cannot resample an empty sequence")
    if n_frames < 1:
        raise ConfigError(f"target frame count must be positive, got {n_frames}")
    if m == 1:
        idx = np.zeros(n_frames, dtype=np.intp)
    else:
        idx = np.round(np.linspace(0.0, m - 1, n_frames)).astype(np.intp)
    return feats[idx]
