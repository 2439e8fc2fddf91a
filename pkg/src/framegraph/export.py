"""Exports for inspection: weight-curve CSV and spatial energy heatmaps.

The weight CSV holds two data rows of exactly N columns: the raw
per-frame intensity weights and a sigmoid-mapped copy (the sigmoid is a
display transform only; the model itself always uses the raw softmax
weights).  Heatmaps are plain-text portable graymaps (P2), 8-bit
quantised, one file per frame, before and after the graph modules.
"""

from __future__ import annotations

import os

import numpy as np

from .autodiff import Tape
from .errors import ConfigError
from .model import ModelParams, current_intensity_weights, model_forward

__all__ = [
    "export_weight_csv",
    "export_heatmaps",
    "write_pgm",
]


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def export_weight_csv(model: ModelParams, path) -> np.ndarray:
    """Write the per-frame intensity weights; returns the raw weights."""
    raw = current_intensity_weights(model)
    mapped = _sigmoid(raw)
    header = ",".join(f"w_{i + 1}" for i in range(raw.size))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(header + "\n")
        f.write(",".join(repr(float(v)) for v in raw) + "\n")
        f.write(",".join(repr(float(v)) for v in mapped) + "\n")
    return raw


def write_pgm(path, image: np.ndarray) -> None:
    """Plain-text P2 graymap with maxval 255."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise ConfigError(f"P2 images are 2-D, got shape {img.shape}")
    rows, cols = img.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    for r in range(rows):
        lines.append(" ".join(str(int(v)) for v in img[r]))
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _quantize(energy: np.ndarray) -> np.ndarray:
    lo, hi = float(energy.min()), float(energy.max())
    if hi <= lo:
        return np.zeros(energy.shape, dtype=np.uint8)
    return np.round(255.0 * (energy - lo) / (hi - lo)).astype(np.uint8)


def export_heatmaps(model: ModelParams, images: np.ndarray, out_dir) -> list[str]:
    """Per-frame spatial energy maps of encoder activations, before and
    after the graph modules.

    "Before" is the channel-wise L2 energy of the pooled stage-2 activation
    grid.  "After" back-projects each graph-module output vector through
    the (linear) projection onto the same grid and takes its channel
    energy.  Without graph modules only the "before" maps are written.
    """
    cfg = model.config
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 3:
        raise ConfigError(f"need one sample of shape (N, rows, cols), got {imgs.shape}")
    tape = Tape(record=False)
    trace = model_forward(tape, imgs, model)
    n = cfg.n_frames
    grid_rows, grid_cols = cfg.frame_rows // 4, cfg.frame_cols // 4
    cells = grid_rows * grid_cols
    c2 = cfg.conv_channels[1]

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    spatial = trace.encoder_spatial.values.reshape(n, cells, c2)
    for f in range(n):
        energy = np.linalg.norm(spatial[f], axis=1).reshape(grid_rows, grid_cols)
        path = os.path.join(out_dir, f"heatmap_encoder_{f:02d}.pgm")
        write_pgm(path, _quantize(energy))
        paths.append(path)

    if trace.module_outputs:
        final = trace.module_outputs[-1].values  # (n, d)
        projection = model.encoder.projection.values  # (cells*c2, d)
        for f in range(n):
            back = projection @ final[f]  # contribution of each input cell
            energy = np.linalg.norm(back.reshape(cells, c2), axis=1).reshape(
                grid_rows, grid_cols
            )
            path = os.path.join(out_dir, f"heatmap_graph_{f:02d}.pgm")
            write_pgm(path, _quantize(energy))
            paths.append(path)
    return paths
