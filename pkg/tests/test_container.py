"""Binary container round trips and malformed-input handling."""

import numpy as np
import pytest

from framegraph.container import (
    CHECKPOINT_MAGIC,
    DATASET_MAGIC,
    load_checkpoint,
    read_dataset,
    save_checkpoint,
    write_dataset,
)
from framegraph.data import SyntheticSpec, make_dataset
from framegraph.errors import ParseError
from framegraph.model import ModelConfig, init_model


@pytest.fixture
def small_dataset():
    return make_dataset(SyntheticSpec(n_classes=3, n_frames=4, rows=8, cols=8, seed=2), 4)


class TestDatasetContainer:
    def test_round_trip_every_field_bit_exact(self, tmp_path, small_dataset):
        path = tmp_path / "data.fgds"
        write_dataset(small_dataset, path)
        loaded = read_dataset(path)
        assert loaded.spec == small_dataset.spec
        assert len(loaded.samples) == len(small_dataset.samples)
        for a, b in zip(loaded.samples, small_dataset.samples):
            assert a.label == b.label
            np.testing.assert_array_equal(a.images, b.images)
            np.testing.assert_array_equal(a.intensity, b.intensity)
            np.testing.assert_array_equal(a.region_mask, b.region_mask)

    def test_round_trip_bytes_stable(self, tmp_path, small_dataset):
        first, second = tmp_path / "a.fgds", tmp_path / "b.fgds"
        write_dataset(small_dataset, first)
        write_dataset(read_dataset(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_corrupted_magic(self, tmp_path, small_dataset):
        path = tmp_path / "data.fgds"
        write_dataset(small_dataset, path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError, match="magic"):
            read_dataset(path)

    def test_version_mismatch(self, tmp_path, small_dataset):
        path = tmp_path / "data.fgds"
        write_dataset(small_dataset, path)
        raw = bytearray(path.read_bytes())
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(ParseError, match="version"):
            read_dataset(path)

    def test_truncated_payload_reports_offset(self, tmp_path, small_dataset):
        path = tmp_path / "data.fgds"
        write_dataset(small_dataset, path)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 17])
        with pytest.raises(ParseError, match="byte offset") as err:
            read_dataset(path)
        assert err.value.offset is not None

    def test_trailing_garbage_rejected(self, tmp_path, small_dataset):
        path = tmp_path / "data.fgds"
        write_dataset(small_dataset, path)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ParseError, match="trailing"):
            read_dataset(path)

    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.fgds"
        path.write_bytes(b"")
        with pytest.raises(ParseError):
            read_dataset(path)


class TestCheckpointContainer:
    def _model(self, module_count=2):
        cfg = ModelConfig(
            n_frames=4, frame_rows=8, frame_cols=8, n_classes=3,
            feature_dim=6, module_count=module_count,
            use_weighted_fusion=module_count > 0, conv_channels=(2, 3),
        )
        return init_model(cfg, seed=4)

    def test_round_trip_bit_exact(self, tmp_path):
        model = self._model()
        rng = np.random.default_rng(0)
        for p in model.parameters():
            p.values += rng.normal(0, 0.1, p.values.shape)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert loaded.config == model.config
        for (name_a, a), (name_b, b) in zip(
            model.named_parameters(), loaded.named_parameters()
        ):
            assert name_a == name_b
            np.testing.assert_array_equal(a.values, b.values)

    def test_round_trip_without_graph_modules(self, tmp_path):
        model = self._model(module_count=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert loaded.adjacency is None
        assert loaded.config.module_count == 0

    def test_dataset_magic_rejected_for_checkpoints(self, tmp_path, small_dataset):
        data_path = tmp_path / "data.fgds"
        write_dataset(small_dataset, data_path)
        with pytest.raises(ParseError, match="magic"):
            load_checkpoint(data_path)

    def test_truncated_block_reports_counts(self, tmp_path):
        model = self._model()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        raw = path.read_bytes()
        path.write_bytes(raw[: len(raw) - 40])
        with pytest.raises(ParseError, match="expected"):
            load_checkpoint(path)

    def test_magic_constants(self):
        assert DATASET_MAGIC == b"FGDS"
        assert CHECKPOINT_MAGIC == b"FGCK"
