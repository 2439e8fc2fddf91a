"""Binary container formats: datasets, feature files, checkpoints.

All three share one framing: 4 magic bytes, a version byte, a one-line
UTF-8 header of ``key=value`` pairs, then fixed-size binary records.
Multi-byte integers and floats are little-endian; floats are IEEE-754
64-bit.  Round trips are bit-exact.

dataset (magic ``FGDS``) record layout, per sample:
    label        uint16
    intensity    n_frames float64
    region_mask  rows*cols bytes of 0/1
    frames       n_frames*rows*cols float64, row-major

feature files reuse the dataset framing with the per-frame feature
dimension ``d`` taking the place of the pixel count:
    label        uint16
    intensity    n_frames float64
    features     n_frames*d float64

checkpoints (magic ``FGCK``) store the model configuration in the header
and named parameter blocks: uint16 name length, UTF-8 name, uint16 rows,
uint16 cols, rows*cols float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset, SequenceSample, SyntheticSpec
from .errors import ParseError

__all__ = [
    "DATASET_MAGIC",
    "CHECKPOINT_MAGIC",
    "FORMAT_VERSION",
    "FeatureRecord",
    "write_dataset",
    "read_dataset",
    "write_features",
    "read_features",
    "save_checkpoint",
    "load_checkpoint",
]

DATASET_MAGIC = b"FGDS"
CHECKPOINT_MAGIC = b"FGCK"
FORMAT_VERSION = 1

_MAX_HEADER = 4096


@dataclass
class FeatureRecord:
    label: int
    intensity: np.ndarray  # (n_frames,)
    features: np.ndarray  # (n_frames, dim)


def _format_number(x) -> str:
    return repr(float(x)) if isinstance(x, float) else str(x)


def _write_preamble(f, magic: bytes, header: dict) -> None:
    f.write(magic)
    f.write(bytes([FORMAT_VERSION]))
    line = " ".join(f"{k}={_format_number(v)}" for k, v in header.items())
    f.write(line.encode("utf-8") + b"\n")


def _read_exact(f, n: int, what: str) -> bytes:
    start = f.tell()
    data = f.read(n)
    if len(data) != n:
        raise ParseError(
            f"truncated {what}: expected {n} bytes, got {len(data)}", offset=start
        )
    return data


def _read_preamble(f, magic: bytes, kind: str) -> dict[str, str]:
    got = f.read(4)
    if len(got) < 4:
        raise ParseError(f"file too short for a {kind} container", offset=0)
    if got != magic:
        raise ParseError(
            f"bad magic bytes for a {kind} container: {got!r} != {magic!r}", offset=0
        )
    version = _read_exact(f, 1, "version byte")[0]
    if version != FORMAT_VERSION:
        raise ParseError(
            f"unsupported {kind} container version {version} "
            f"(this build reads version {FORMAT_VERSION})",
            offset=4,
        )
    raw = bytearray()
    while True:
        b = f.read(1)
        if not b:
            raise ParseError("header line is not newline-terminated", offset=f.tell())
        if b == b"\n":
            break
        raw.extend(b)
        if len(raw) > _MAX_HEADER:
            raise ParseError("header line too long", offset=f.tell())
    fields: dict[str, str] = {}
    text = raw.decode("utf-8")
    for token in text.split():
        if "=" not in token:
            raise ParseError(f"malformed header token '{token}'", offset=5)
        key, value = token.split("=", 1)
        fields[key] = value
    return fields


def _header_int(fields: dict, key: str) -> int:
    if key not in fields:
        raise ParseError(f"missing header key '{key}'")
    try:
        return int(fields[key])
    except ValueError:
        raise ParseError(f"header key '{key}' is not an integer: '{fields[key]}'") from None


def _header_float(fields: dict, key: str) -> float:
    if key not in fields:
        raise ParseError(f"missing header key '{key}'")
    try:
        return float(fields[key])
    except ValueError:
        raise ParseError(f"header key '{key}' is not a number: '{fields[key]}'") from None


# -- datasets --------------------------------------------------------------


def write_dataset(dataset: Dataset, path) -> None:
    spec = dataset.spec
    header = {
        "K": spec.n_classes,
        "N": spec.n_frames,
        "R": spec.rows,
        "C": spec.cols,
        "count": len(dataset.samples),
        "curve_family": spec.curve_family,
        "seed": spec.seed,
        "noise_sigma": float(spec.noise_sigma),
        "region_size": spec.region_size,
    }
    with open(path, "wb") as f:
        _write_preamble(f, DATASET_MAGIC, header)
        for sample in dataset.samples:
            f.write(struct.pack("<H", sample.label))
            f.write(np.asarray(sample.intensity, dtype="<f8").tobytes())
            f.write(np.asarray(sample.region_mask, dtype=np.uint8).tobytes())
            f.write(np.asarray(sample.images, dtype="<f8").tobytes())


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        fields = _read_preamble(f, DATASET_MAGIC, "dataset")
        k = _header_int(fields, "K")
        n = _header_int(fields, "N")
        rows = _header_int(fields, "R")
        cols = _header_int(fields, "C")
        count = _header_int(fields, "count")
        if "curve_family" not in fields:
            raise ParseError("missing header key 'curve_family'")
        spec = SyntheticSpec(
            n_classes=k,
            n_frames=n,
            rows=rows,
            cols=cols,
            curve_family=fields["curve_family"],
            noise_sigma=_header_float(fields, "noise_sigma"),
            region_size=_header_int(fields, "region_size"),
            seed=_header_int(fields, "seed"),
        )
        samples = []
        for i in range(count):
            label = struct.unpack("<H", _read_exact(f, 2, f"label of sample {i}"))[0]
            if label >= k:
                raise ParseError(
                    f"sample {i} has label {label}, but the header declares K={k}",
                    offset=f.tell() - 2,
                )
            intensity = np.frombuffer(
                _read_exact(f, 8 * n, f"intensity of sample {i}"), dtype="<f8"
            ).copy()
            mask_raw = np.frombuffer(
                _read_exact(f, rows * cols, f"mask of sample {i}"), dtype=np.uint8
            )
            if mask_raw.max(initial=0) > 1:
                raise ParseError(
                    f"mask of sample {i} holds bytes other than 0/1",
                    offset=f.tell() - rows * cols,
                )
            mask = mask_raw.reshape(rows, cols).copy()
            frames = (
                np.frombuffer(
                    _read_exact(f, 8 * n * rows * cols, f"frames of sample {i}"),
                    dtype="<f8",
                )
                .reshape(n, rows, cols)
                .copy()
            )
            samples.append(SequenceSample(frames, int(label), intensity, mask))
        trailing = f.read(1)
        if trailing:
            raise ParseError(
                f"unexpected trailing bytes after {count} samples", offset=f.tell() - 1
            )
    return Dataset(spec, samples)


# -- feature files ----------------------------------------------------------


def write_features(path, records: list[FeatureRecord], n_frames: int, dim: int) -> None:
    header = {"N": n_frames, "d": dim, "count": len(records)}
    with open(path, "wb") as f:
        _write_preamble(f, DATASET_MAGIC, header)
        for rec in records:
            feats = np.asarray(rec.features, dtype="<f8")
            if feats.shape != (n_frames, dim):
                raise ParseError(
                    f"feature record has shape {feats.shape}, expected ({n_frames}, {dim})"
                )
            f.write(struct.pack("<H", rec.label))
            f.write(np.asarray(rec.intensity, dtype="<f8").tobytes())
            f.write(feats.tobytes())


def read_features(path) -> list[FeatureRecord]:
    with open(path, "rb") as f:
        fields = _read_preamble(f, DATASET_MAGIC, "feature")
        n = _header_int(fields, "N")
        dim = _header_int(fields, "d")
        count = _header_int(fields, "count")
        records = []
        for i in range(count):
            label = struct.unpack("<H", _read_exact(f, 2, f"label of record {i}"))[0]
            intensity = np.frombuffer(
                _read_exact(f, 8 * n, f"intensity of record {i}"), dtype="<f8"
            ).copy()
            features = (
                np.frombuffer(
                    _read_exact(f, 8 * n * dim, f"features of record {i}"), dtype="<f8"
                )
                .reshape(n, dim)
                .copy()
            )
            records.append(FeatureRecord(int(label), intensity, features))
        trailing = f.read(1)
        if trailing:
            raise ParseError(
                f"unexpected trailing bytes after {count} records", offset=f.tell() - 1
            )
    return records


# -- checkpoints -------------------------------------------------------------


def save_checkpoint(path, model) -> None:
    cfg = model.config
    named = model.named_parameters()
    header = {
        "n_frames": cfg.n_frames,
        "frame_rows": cfg.frame_rows,
        "frame_cols": cfg.frame_cols,
        "n_classes": cfg.n_classes,
        "feature_dim": cfg.feature_dim,
        "module_count": cfg.module_count,
        "use_weighted_fusion": int(cfg.use_weighted_fusion),
        "fusion_mean_axis": cfg.fusion_mean_axis,
        "slope": float(cfg.slope),
        "conv_channels": f"{cfg.conv_channels[0]},{cfg.conv_channels[1]}",
        "kernel_size": cfg.kernel_size,
        "blocks": len(named),
    }
    with open(path, "wb") as f:
        _write_preamble(f, CHECKPOINT_MAGIC, header)
        for name, tensor in named:
            encoded = name.encode("utf-8")
            rows, cols = tensor.values.shape
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<HH", rows, cols))
            f.write(np.asarray(tensor.values, dtype="<f8").tobytes())


def load_checkpoint(path):
    from .model import ModelConfig, init_model

    with open(path, "rb") as f:
        fields = _read_preamble(f, CHECKPOINT_MAGIC, "checkpoint")
        channels = fields.get("conv_channels", "4,8").split(",")
        if len(channels) != 2:
            raise ParseError(f"malformed conv_channels '{fields.get('conv_channels')}'")
        cfg = ModelConfig(
            n_frames=_header_int(fields, "n_frames"),
            frame_rows=_header_int(fields, "frame_rows"),
            frame_cols=_header_int(fields, "frame_cols"),
            n_classes=_header_int(fields, "n_classes"),
            feature_dim=_header_int(fields, "feature_dim"),
            module_count=_header_int(fields, "module_count"),
            use_weighted_fusion=bool(_header_int(fields, "use_weighted_fusion")),
            fusion_mean_axis=fields.get("fusion_mean_axis", "column"),
            slope=_header_float(fields, "slope"),
            conv_channels=(int(channels[0]), int(channels[1])),
            kernel_size=_header_int(fields, "kernel_size"),
        )
        n_blocks = _header_int(fields, "blocks")
        model = init_model(cfg, seed=0)
        expected = dict(model.named_parameters())
        if n_blocks != len(expected):
            raise ParseError(
                f"checkpoint declares {n_blocks} blocks, model needs {len(expected)}"
            )
        seen = set()
        for i in range(n_blocks):
            name_len = struct.unpack("<H", _read_exact(f, 2, f"name length of block {i}"))[0]
            name = _read_exact(f, name_len, f"name of block {i}").decode("utf-8")
            rows, cols = struct.unpack("<HH", _read_exact(f, 4, f"shape of block {i}"))
            data = np.frombuffer(
                _read_exact(f, 8 * rows * cols, f"values of block '{name}'"), dtype="<f8"
            ).reshape(rows, cols)
            if name not in expected:
                raise ParseError(f"unknown parameter block '{name}'")
            target = expected[name]
            if target.values.shape != (rows, cols):
                raise ParseError(
                    f"block '{name}' has shape ({rows}, {cols}), "
                    f"model needs {target.values.shape}"
                )
            target.values = data.copy()
            seen.add(name)
        missing = set(expected) - seen
        if missing:
            raise ParseError(f"checkpoint is missing parameter blocks: {sorted(missing)}")
        trailing = f.read(1)
        if trailing:
            raise ParseError("unexpected trailing bytes after parameter blocks", offset=f.tell() - 1)
    return model
