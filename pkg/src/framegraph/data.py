"""Synthetic expression-style sequence generator with ground truth.

Each sample is a short grayscale video whose class signal is a fixed
spatial pattern (a distinct textured region per class) scaled frame by
frame by an intensity curve: either a ramp (neutral to peak) or a bump
(neutral to peak and back).  A label-independent static distractor blob
and optional pixel noise are added on top.  Ground truth exposes both the
intensity curve and the class-defining region mask, so learned frame
weights and spatial focus can be checked quantitatively.

Randomness is counter-based (Philox) with one substream per purpose and
per within-class sample index, so generation is reproducible regardless
of iteration order and distractor placement is independent of the label
by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

__all__ = [
    "CURVE_FAMILIES",
    "SyntheticSpec",
    "SequenceSample",
    "Dataset",
    "make_sample",
    "render_sample",
    "make_dataset",
    "stratified_split",
    "class_patterns",
    "STANDARD_SPEC",
]

CURVE_FAMILIES = ("ramp", "bump")

# Substream purposes.
_PATTERNS, _CURVE, _DISTRACTOR, _NOISE = range(4)

_DISTRACTOR_AMPLITUDE = (0.3, 0.7)


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int = 6
    n_frames: int = 16
    rows: int = 16
    cols: int = 16
    curve_family: str = "ramp"
    noise_sigma: float = 0.05
    region_size: int = 4
    seed: int = 11

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.n_frames < 2:
            raise ConfigError(f"need at least 2 frames, got {self.n_frames}")
        if self.curve_family not in CURVE_FAMILIES:
            raise ConfigError(
                f"curve_family must be one of {CURVE_FAMILIES}, got '{self.curve_family}'"
            )
        if self.curve_family == "bump" and self.n_frames < 3:
            raise ConfigError("bump curves need at least 3 frames for an interior peak")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be non-negative, got {self.noise_sigma}")
        if self.region_size < 1 or self.region_size > min(self.rows, self.cols):
            raise ConfigError(
                f"region_size {self.region_size} does not fit a "
                f"{self.rows}x{self.cols} frame"
            )
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}")
        cells = (self.rows // self.region_size) * (self.cols // self.region_size)
        if cells < self.n_classes + 1:
            raise ConfigError(
                f"{cells} region cells cannot host {self.n_classes} classes "
                "plus a distractor cell"
            )


#: Fixed configuration used by the end-to-end acceptance experiments.
STANDARD_SPEC = SyntheticSpec()


@dataclass
class SequenceSample:
    images: np.ndarray  # (n_frames, rows, cols) float64 in [0, 1]
    label: int
    intensity: np.ndarray  # (n_frames,) in [0, 1], peak exactly 1
    region_mask: np.ndarray  # (rows, cols) uint8, 1 inside the class region


def _stream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    key = np.array([seed, (purpose << 48) + index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def _grid_cells(spec: SyntheticSpec) -> list[tuple[int, int]]:
    s = spec.region_size
    return [
        (r * s, c * s)
        for r in range(spec.rows // s)
        for c in range(spec.cols // s)
    ]


def class_patterns(spec: SyntheticSpec) -> tuple[np.ndarray, np.ndarray]:
    """Per-class spatial patterns and masks, (K, rows, cols) each.

    Class k owns grid cell k, so patterns occupy disjoint pixels and are
    orthogonal as vectors.  Textures come from a dedicated substream.
    """
    rng = _stream(spec.seed, _PATTERNS)
    cells = _grid_cells(spec)
    s = spec.region_size
    patterns = np.zeros((spec.n_classes, spec.rows, spec.cols))
    masks = np.zeros((spec.n_classes, spec.rows, spec.cols), dtype=np.uint8)
    for k in range(spec.n_classes):
        r0, c0 = cells[k]
        patterns[k, r0 : r0 + s, c0 : c0 + s] = rng.uniform(0.5, 1.0, size=(s, s))
        masks[k, r0 : r0 + s, c0 : c0 + s] = 1
    return patterns, masks


def _draw_intensity(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    n = spec.n_frames
    if spec.curve_family == "ramp":
        # Non-decreasing, 0 at the first frame, exactly 1 at the last.
        exponent = rng.uniform(0.5, 2.0)
        return (np.arange(n) / (n - 1)) ** exponent
    # Bump: Gaussian with an interior peak and endpoints below 0.5.
    peak = rng.uniform(0.3, 0.7) * (n - 1)
    width = rng.uniform(0.12, 0.2) * (n - 1)
    curve = np.exp(-0.5 * ((np.arange(n) - peak) / width) ** 2)
    return curve / curve.max()


def render_sample(
    spec: SyntheticSpec, label: int, intensity: np.ndarray, sample_key: int
) -> SequenceSample:
    """Render frames for a given intensity curve.

    frame[t] = intensity[t] * class pattern + static distractor + noise,
    clamped to [0, 1].  The distractor lives in a grid cell no class owns
    and its substream never sees the label.
    """
    if not 0 <= label < spec.n_classes:
        raise IndexError(f"label {label} out of range for {spec.n_classes} classes")
    intensity = np.asarray(intensity, dtype=np.float64)
    if intensity.shape != (spec.n_frames,):
        raise ConfigError(
            f"intensity must have {spec.n_frames} entries, got shape {intensity.shape}"
        )
    patterns, masks = class_patterns(spec)
    cells = _grid_cells(spec)
    free_cells = cells[spec.n_classes :]
    s = spec.region_size

    drng = _stream(spec.seed, _DISTRACTOR, sample_key)
    r0, c0 = free_cells[drng.integers(len(free_cells))]
    amplitude = drng.uniform(*_DISTRACTOR_AMPLITUDE)
    static = np.zeros((spec.rows, spec.cols))
    static[r0 : r0 + s, c0 : c0 + s] = amplitude * drng.uniform(0.0, 1.0, size=(s, s))

    frames = intensity[:, None, None] * patterns[label][None] + static[None]
    if spec.noise_sigma > 0:
        nrng = _stream(spec.seed, _NOISE, sample_key)
        frames = frames + nrng.normal(0.0, spec.noise_sigma, size=frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return SequenceSample(frames, label, intensity.copy(), masks[label].copy())


def make_sample(spec: SyntheticSpec, label: int, sample_key: int = 0) -> SequenceSample:
    """Draw an intensity curve from the sample's substream and render."""
    crng = _stream(spec.seed, _CURVE, sample_key)
    return render_sample(spec, label, _draw_intensity(spec, crng), sample_key)


@dataclass
class Dataset:
    spec: SyntheticSpec
    samples: list[SequenceSample] = field(default_factory=list)

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def images(self, indices=None) -> np.ndarray:
        idx = range(len(self.samples)) if indices is None else indices
        return np.stack([self.samples[i].images for i in idx])

    def split(self, val_fraction: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
        return stratified_split(self.labels(), val_fraction)


def make_dataset(spec: SyntheticSpec, per_class: int) -> Dataset:
    """Balanced dataset: per_class samples per class, fully seed-determined.

    Sample substreams are keyed by the within-class index, so nuisance
    factors (curve shape, distractor, noise) are identically distributed
    across classes.
    """
    if per_class < 2:
        raise ConfigError(f"per_class must be at least 2, got {per_class}")
    samples = [
        make_sample(spec, label, j)
        for label in range(spec.n_classes)
        for j in range(per_class)
    ]
    return Dataset(spec, samples)


def stratified_split(
    labels: np.ndarray, val_fraction: float = 0.2
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic order-preserving split: the last ``val_fraction`` of
    each class's samples go to validation."""
    labels = np.asarray(labels)
    train, val = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        n_val = int(len(idx) * val_fraction)
        cut = len(idx) - n_val
        train.extend(idx[:cut])
        val.extend(idx[cut:])
    return np.array(sorted(train), dtype=np.intp), np.array(sorted(val), dtype=np.intp)
