"""Training loop, evaluation, and the ablation runner.

Plain minibatch SGD with weight decay over all parameters, the adjacency
matrix included (its per-batch gradient averages over the batch because
the loss is the batch-mean cross-entropy).  Runs are fully determined by
the seed: identical configs reproduce the metrics CSV byte for byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

import numpy as np

from .autodiff import SgdConfig, Tape, backward, sgd_step
from .container import read_dataset, save_checkpoint
from .data import Dataset
from .errors import ConfigError, NumericError
from .model import (
    ModelConfig,
    ModelParams,
    adjacency_offdiagonal_magnitude,
    current_intensity_weights,
    init_model,
    model_forward,
)

__all__ = [
    "RunConfig",
    "EpochMetrics",
    "TrainResult",
    "AblationRow",
    "fit_arrays",
    "train",
    "evaluate_model",
    "confusion_percentages",
    "ablation",
    "oversmoothing_metric",
    "write_metrics_csv",
    "DEFAULT_ABLATION_VARIANTS",
]


@dataclass(frozen=True)
class RunConfig:
    """One training run: data, architecture knobs, and SGD settings."""

    dataset: str
    out_dir: str
    feature_dim: int = 32
    module_count: int = 2
    use_weighted_fusion: bool = True
    fusion_mean_axis: str = "column"
    epochs: int = 40
    learning_rate: float = 0.001
    weight_decay: float = 0.00005
    batch_size: int = 8
    seed: int = 0
    n_frames: int | None = None  # cross-checked against the dataset when set
    n_classes: int | None = None

    def validate(self) -> None:
        if not self.dataset:
            raise ConfigError("dataset path is required")
        if not self.out_dir:
            raise ConfigError("output directory is required")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if not 0 <= self.module_count <= 3:
            raise ConfigError(f"module_count must be 0..3, got {self.module_count}")
        if self.fusion_mean_axis not in ("column", "row"):
            raise ConfigError(
                f"fusion_mean_axis must be 'column' or 'row', got '{self.fusion_mean_axis}'"
            )


@dataclass
class EpochMetrics:
    epoch: int
    train_loss: float
    train_acc: float
    val_acc: float
    a_offdiag: float
    weight_curve: np.ndarray  # (n_frames,)


@dataclass
class TrainResult:
    model: ModelParams
    metrics: list[EpochMetrics]
    metrics_path: str | None = None
    checkpoint_path: str | None = None


def _mean_loss_and_hits(model: ModelParams, images: np.ndarray, labels: np.ndarray):
    """Forward-only mean cross-entropy and hit count over a sample set."""
    tape = Tape(record=False)
    total, hits = 0.0, 0
    for imgs, label in zip(images, labels):
        trace = model_forward(tape, imgs, model)
        total += tape.cross_entropy(trace.logits, int(label)).item()
        hits += int(np.argmax(trace.logits.values[0]) == label)
    n = len(labels)
    return total / n, hits / n


def _epoch_snapshot(
    model: ModelParams,
    epoch: int,
    train_loss: float,
    train_acc: float,
    x_val: np.ndarray | None,
    y_val: np.ndarray | None,
) -> EpochMetrics:
    val_acc = float("nan")
    if x_val is not None and len(x_val):
        _, val_acc = _mean_loss_and_hits(model, x_val, y_val)
    return EpochMetrics(
        epoch=epoch,
        train_loss=train_loss,
        train_acc=train_acc,
        val_acc=val_acc,
        a_offdiag=adjacency_offdiagonal_magnitude(model),
        weight_curve=current_intensity_weights(model),
    )


def fit_arrays(
    model: ModelParams,
    x_train: np.ndarray,
    y_train: np.ndarray,
    *,
    epochs: int,
    learning_rate: float = 0.001,
    weight_decay: float = 0.00005,
    batch_size: int = 8,
    seed: int = 0,
    x_val: np.ndarray | None = None,
    y_val: np.ndarray | None = None,
) -> list[EpochMetrics]:
    """Run SGD epochs over in-memory arrays; returns one metrics record per
    epoch plus the epoch-0 evaluation of the initial model.

    Training accuracy and loss come from the training batches themselves
    (predictions before each update), so no extra pass is needed.
    """
    sgd = SgdConfig(learning_rate=learning_rate, weight_decay=weight_decay)
    params = model.parameters()
    rng = np.random.default_rng(seed)
    n = len(y_train)

    loss0, acc0 = _mean_loss_and_hits(model, x_train, y_train)
    records = [_epoch_snapshot(model, 0, loss0, acc0, x_val, y_val)]

    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        loss_sum, hits = 0.0, 0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            tape = Tape()
            losses = []
            try:
                for i in batch:
                    trace = model_forward(tape, x_train[i], model)
                    hits += int(np.argmax(trace.logits.values[0]) == y_train[i])
                    losses.append(tape.cross_entropy(trace.logits, int(y_train[i])))
                total = losses[0]
                for extra in losses[1:]:
                    total = tape.add(total, extra)
                loss = tape.scale(total, 1.0 / len(batch))
                backward(tape, loss, params)
                sgd_step(params, sgd)
            except NumericError as exc:
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // batch_size}: {exc}"
                ) from exc
            loss_sum += loss.item() * len(batch)
        records.append(
            _epoch_snapshot(model, epoch, loss_sum / n, hits / n, x_val, y_val)
        )
    return records


def write_metrics_csv(path, records: list[EpochMetrics], n_frames: int) -> None:
    """Columns are exactly epoch,train_loss,train_acc,val_acc,a_offdiag,w_1..w_N."""
    header = "epoch,train_loss,train_acc,val_acc,a_offdiag," + ",".join(
        f"w_{i + 1}" for i in range(n_frames)
    )
    lines = [header]
    for r in records:
        cells = [
            str(r.epoch),
            repr(r.train_loss),
            repr(r.train_acc),
            repr(r.val_acc),
            repr(r.a_offdiag),
        ]
        cells.extend(repr(float(w)) for w in r.weight_curve)
        lines.append(",".join(cells))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("\n".join(lines) + "\n")


def _model_config_for(dataset: Dataset, config: RunConfig) -> ModelConfig:
    spec = dataset.spec
    if config.n_frames is not None and config.n_frames != spec.n_frames:
        raise ConfigError(
            f"config expects {config.n_frames} frames, dataset has {spec.n_frames}"
        )
    if config.n_classes is not None and config.n_classes != spec.n_classes:
        raise ConfigError(
            f"config expects {config.n_classes} classes, dataset has {spec.n_classes}"
        )
    return ModelConfig(
        n_frames=spec.n_frames,
        frame_rows=spec.rows,
        frame_cols=spec.cols,
        n_classes=spec.n_classes,
        feature_dim=config.feature_dim,
        module_count=config.module_count,
        use_weighted_fusion=config.use_weighted_fusion,
        fusion_mean_axis=config.fusion_mean_axis,
    )


def train(config: RunConfig, dataset: Dataset | None = None) -> TrainResult:
    """Train per the config, writing ``metrics.csv`` and ``model.ckpt`` into
    the output directory.  ``dataset`` skips re-reading the container."""
    config.validate()
    if dataset is None:
        dataset = read_dataset(config.dataset)
    model_cfg = _model_config_for(dataset, config)
    model = init_model(model_cfg, config.seed)

    train_idx, val_idx = dataset.split()
    labels = dataset.labels()
    records = fit_arrays(
        model,
        dataset.images(train_idx),
        labels[train_idx],
        epochs=config.epochs,
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        batch_size=config.batch_size,
        seed=config.seed,
        x_val=dataset.images(val_idx) if len(val_idx) else None,
        y_val=labels[val_idx] if len(val_idx) else None,
    )

    os.makedirs(config.out_dir, exist_ok=True)
    metrics_path = os.path.join(config.out_dir, "metrics.csv")
    checkpoint_path = os.path.join(config.out_dir, "model.ckpt")
    write_metrics_csv(metrics_path, records, model_cfg.n_frames)
    save_checkpoint(checkpoint_path, model)
    return TrainResult(model, records, metrics_path, checkpoint_path)


def evaluate_model(
    model: ModelParams, images: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    """Argmax classification accuracy plus the raw confusion-count matrix
    (rows: true class, columns: predicted class)."""
    k = model.config.n_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    tape = Tape(record=False)
    for imgs, label in zip(images, labels):
        trace = model_forward(tape, imgs, model)
        confusion[int(label), int(np.argmax(trace.logits.values[0]))] += 1
    accuracy = float(np.trace(confusion)) / max(1, len(labels))
    return accuracy, confusion


def confusion_percentages(confusion: np.ndarray) -> np.ndarray:
    """Row-normalised confusion matrix in percent; empty rows stay zero."""
    counts = confusion.astype(np.float64)
    totals = counts.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        percent = np.where(totals > 0, 100.0 * counts / totals, 0.0)
    return percent


def oversmoothing_metric(model: ModelParams, images: np.ndarray) -> float:
    """Mean pairwise cosine distance between frame features after the last
    graph module (after the encoder when there are no modules), averaged
    over samples.  Smaller means more collapsed (over-smoothed) features."""
    tape = Tape(record=False)
    total, count = 0.0, 0
    for imgs in images:
        trace = model_forward(tape, imgs, model)
        feats = (
            trace.module_outputs[-1].values
            if trace.module_outputs
            else trace.encoder_features.values
        )
        norms = np.linalg.norm(feats, axis=1)
        norms = np.where(norms > 0, norms, 1.0)
        unit = feats / norms[:, None]
        cosine = np.clip(unit @ unit.T, -1.0, 1.0)
        n = feats.shape[0]
        iu = np.triu_indices(n, k=1)
        total += float((1.0 - cosine[iu]).mean())
        count += 1
    return total / max(1, count)


#: module_count / use_weighted_fusion pairs mirroring the ablation table:
#: plain backbone, one/two/three graph modules, and two modules plus fusion.
DEFAULT_ABLATION_VARIANTS: tuple[tuple[int, bool], ...] = (
    (0, False),
    (1, False),
    (2, False),
    (3, False),
    (2, True),
)


@dataclass
class AblationRow:
    module_count: int
    use_weighted_fusion: bool
    val_acc: float
    oversmoothing: float

    def describe(self) -> str:
        name = f"graph module x{self.module_count}"
        if self.module_count == 0:
            name = "backbone only"
        if self.use_weighted_fusion:
            name += " + weighted fusion"
        return name


def ablation(
    config: RunConfig,
    variants: tuple[tuple[int, bool], ...] = DEFAULT_ABLATION_VARIANTS,
    dataset: Dataset | None = None,
) -> list[AblationRow]:
    """Train one model per variant on the same data, seed, and budget.

    Variants may differ only in module count and the fusion flag.  Writes
    ``ablation.csv`` into the output directory and returns the rows.
    """
    config.validate()
    if dataset is None:
        dataset = read_dataset(config.dataset)
    train_idx, val_idx = dataset.split()
    labels = dataset.labels()
    x_train, y_train = dataset.images(train_idx), labels[train_idx]
    x_val, y_val = dataset.images(val_idx), labels[val_idx]

    rows = []
    for module_count, fused in variants:
        variant_cfg = replace(config, module_count=module_count, use_weighted_fusion=fused)
        model = init_model(_model_config_for(dataset, variant_cfg), variant_cfg.seed)
        fit_arrays(
            model,
            x_train,
            y_train,
            epochs=variant_cfg.epochs,
            learning_rate=variant_cfg.learning_rate,
            weight_decay=variant_cfg.weight_decay,
            batch_size=variant_cfg.batch_size,
            seed=variant_cfg.seed,
        )
        val_acc, _ = evaluate_model(model, x_val, y_val)
        rows.append(
            AblationRow(
                module_count=module_count,
                use_weighted_fusion=fused,
                val_acc=val_acc,
                oversmoothing=oversmoothing_metric(model, x_val),
            )
        )

    os.makedirs(config.out_dir, exist_ok=True)
    path = os.path.join(config.out_dir, "ablation.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("module_count,weighted_fusion,val_acc,oversmoothing\n")
        for row in rows:
            f.write(
                f"{row.module_count},{int(row.use_weighted_fusion)},"
                f"{repr(row.val_acc)},{repr(row.oversmoothing)}\n"
            )
    return rows
