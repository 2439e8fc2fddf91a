"""Full model assembly: encoder, stacked graph modules, fusion, classifier."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, Tensor
from .encoder import ConvEncoderParams, encode_sequence_with_spatial, init_encoder
from .errors import ConfigError
from .fusion import ClassifierParams, classify, init_classifier, intensity_weights, weighted_fusion
from .graph import (
    BiRecurrentParams,
    GraphConvParams,
    graph_module_forward,
    identity_adjacency,
    init_birecurrent,
    init_graph_conv,
)

__all__ = [
    "ModelConfig",
    "ModelParams",
    "ForwardTrace",
    "init_model",
    "model_forward",
    "current_intensity_weights",
    "adjacency_offdiagonal_magnitude",
]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters; training settings live elsewhere."""

    n_frames: int
    frame_rows: int
    frame_cols: int
    n_classes: int
    feature_dim: int = 32
    module_count: int = 2
    use_weighted_fusion: bool = True
    fusion_mean_axis: str = "column"
    slope: float = 0.2
    conv_channels: tuple[int, int] = (4, 8)
    kernel_size: int = 3

    def validate(self) -> None:
        if self.n_frames < 1:
            raise ConfigError(f"need at least one frame, got {self.n_frames}")
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if not 0 <= self.module_count <= 3:
            raise ConfigError(f"module_count must be 0..3, got {self.module_count}")
        if self.module_count and self.feature_dim % 2:
            raise ConfigError(
                f"feature_dim must be even for the recurrent layer, got {self.feature_dim}"
            )
        if self.use_weighted_fusion and self.module_count == 0:
            raise ConfigError(
                "weighted fusion needs at least one graph module (weights come "
                "from the adjacency matrix)"
            )
        if self.fusion_mean_axis not in ("column", "row"):
            raise ConfigError(
                f"fusion_mean_axis must be 'column' or 'row', got '{self.fusion_mean_axis}'"
            )
        if self.frame_rows % 4 or self.frame_cols % 4:
            raise ConfigError(
                f"frame size must be divisible by 4, got "
                f"{self.frame_rows}x{self.frame_cols}"
            )
        if not 0.0 < self.slope < 1.0:
            raise ConfigError(f"slope must lie in (0, 1), got {self.slope}")


@dataclass
class ModelParams:
    config: ModelConfig
    encoder: ConvEncoderParams
    adjacency: Tensor | None
    modules: list[tuple[GraphConvParams, BiRecurrentParams]] = field(default_factory=list)
    classifier: ClassifierParams | None = None

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        enc = self.encoder
        named = [
            ("encoder.kernel1", enc.kernel1),
            ("encoder.bias1", enc.bias1),
            ("encoder.kernel2", enc.kernel2),
            ("encoder.bias2", enc.bias2),
            ("encoder.projection", enc.projection),
            ("encoder.proj_bias", enc.proj_bias),
        ]
        if self.adjacency is not None:
            named.append(("adjacency", self.adjacency))
        for i, (conv, rec) in enumerate(self.modules):
            named.extend(
                [
                    (f"module{i}.conv_weight", conv.weight),
                    (f"module{i}.embed_fwd", rec.embed_fwd),
                    (f"module{i}.embed_bwd", rec.embed_bwd),
                    (f"module{i}.project_fwd", rec.project_fwd),
                    (f"module{i}.project_bwd", rec.project_bwd),
                    (f"module{i}.bias", rec.bias),
                ]
            )
        named.append(("classifier.weight", self.classifier.weight))
        named.append(("classifier.bias", self.classifier.bias))
        return named

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]


def init_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Build a model with freshly initialised parameters.

    Parameter draws happen in a fixed order, so a seed pins every value.
    The adjacency matrix starts as the identity.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    encoder = init_encoder(
        config.frame_rows,
        config.frame_cols,
        config.feature_dim,
        rng,
        channels=config.conv_channels,
        kernel_size=config.kernel_size,
        slope=config.slope,
    )
    adjacency = identity_adjacency(config.n_frames) if config.module_count else None
    modules = []
    for _ in range(config.module_count):
        conv = init_graph_conv(config.feature_dim, rng, slope=config.slope)
        rec = init_birecurrent(config.feature_dim, rng)
        modules.append((conv, rec))
    classifier = init_classifier(config.n_classes, config.feature_dim, rng)
    return ModelParams(config, encoder, adjacency, modules, classifier)


@dataclass
class ForwardTrace:
    """Everything one forward pass produced, kept for metrics and exports."""

    logits: Tensor  # 1 x K
    weights: Tensor  # 1 x N (uniform when fusion is off)
    encoder_features: Tensor  # N x d
    encoder_spatial: Tensor  # (N * rows/4 * cols/4) x c2
    module_outputs: list[Tensor]  # each N x d
    fused: Tensor  # 1 x d


def model_forward(
    tape: Tape,
    images: np.ndarray,
    model: ModelParams,
    fixed_weights: np.ndarray | None = None,
) -> ForwardTrace:
    """Encode frames, run the stacked graph modules, fuse, classify.

    ``fixed_weights`` substitutes a constant weight row for the
    adjacency-derived one (used to probe the frozen fusion branch).
    """
    cfg = model.config
    n = cfg.n_frames
    features, spatial = encode_sequence_with_spatial(tape, images, model.encoder)
    if features.values.shape[0] != n:
        raise ConfigError(
            f"model built for {n} frames, got {features.values.shape[0]}"
        )
    hidden = features
    module_outputs: list[Tensor] = []
    for conv, rec in model.modules:
        hidden = graph_module_forward(tape, hidden, model.adjacency, conv, rec)
        module_outputs.append(hidden)

    if fixed_weights is not None:
        weights = Tensor(np.asarray(fixed_weights, dtype=np.float64).reshape(1, n))
        fused = weighted_fusion(tape, hidden, weights)
    elif cfg.use_weighted_fusion:
        weights = intensity_weights(tape, model.adjacency, cfg.fusion_mean_axis)
        fused = weighted_fusion(tape, hidden, weights)
    else:
        weights = Tensor(np.full((1, n), 1.0 / n))
        fused = tape.mean_over_rows(hidden)
    logits = classify(tape, fused, model.classifier)
    return ForwardTrace(logits, weights, features, spatial, module_outputs, fused)


def current_intensity_weights(model: ModelParams) -> np.ndarray:
    """The weight row the model would use right now (uniform without an
    adjacency matrix)."""
    if model.adjacency is None:
        return np.full(model.config.n_frames, 1.0 / model.config.n_frames)
    tape = Tape(record=False)
    w = intensity_weights(tape, model.adjacency, model.config.fusion_mean_axis)
    return w.values[0].copy()


def adjacency_offdiagonal_magnitude(model: ModelParams) -> float:
    """Mean absolute off-diagonal adjacency entry; 0.0 without modules."""
    if model.adjacency is None:
        return 0.0
    a = model.adjacency.values
    n = a.shape[0]
    if n == 1:
        return 0.0
    off = a - np.diag(np.diag(a))
    return float(np.abs(off).sum() / (n * n - n))
