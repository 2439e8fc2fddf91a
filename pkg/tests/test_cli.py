"""Command-line driver: subcommands, config files, exit codes, artifacts."""

import os

import numpy as np
import pytest

from framegraph.cli import main, parse_config_file
from framegraph.errors import ConfigError


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated tiny dataset plus a finished training run."""
    root = tmp_path_factory.mktemp("cli")
    data = str(root / "tiny.fgds")
    assert (
        main(
            [
                "gen", "--classes", "3", "--per-class", "5", "--frames", "4",
                "--size", "8", "--curve", "ramp", "--noise", "0.02",
                "--seed", "2", "--out", data,
            ]
        )
        == 0
    )
    run_dir = str(root / "run")
    assert (
        main(
            [
                "train", "--data", data, "--out", run_dir, "--feature-dim", "8",
                "--modules", "1", "--epochs", "2", "--batch-size", "4", "--seed", "0",
            ]
        )
        == 0
    )
    return {"root": root, "data": data, "run": run_dir}


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        import subprocess
        import sys

        proc = subprocess.run(
            [sys.executable, "-m", "framegraph", "gen", "--classes", "2",
             "--per-class", "2", "--frames", "4", "--size", "8",
             "--out", str(tmp_path / "d.fgds")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert "wrote 4 samples" in proc.stdout


class TestGen:
    def test_output_is_readable(self, workspace):
        from framegraph.container import read_dataset

        ds = read_dataset(workspace["data"])
        assert len(ds.samples) == 15
        assert ds.spec.curve_family == "ramp"

    def test_usage_error_exit_code(self, capsys):
        assert main(["gen", "--classes", "not-a-number", "--out", "x"]) == 1
        assert "error" in capsys.readouterr().err

    def test_unknown_command_is_usage_error(self):
        assert main(["frobnicate"]) == 1


class TestTrain:
    def test_artifacts_written(self, workspace):
        assert os.path.exists(os.path.join(workspace["run"], "metrics.csv"))
        assert os.path.exists(os.path.join(workspace["run"], "model.ckpt"))

    def test_metrics_header(self, workspace):
        header = open(os.path.join(workspace["run"], "metrics.csv")).readline().strip()
        assert header.startswith("epoch,train_loss,train_acc,val_acc,a_offdiag,w_1")

    def test_missing_dataset_is_io_error(self, tmp_path):
        code = main(
            ["train", "--data", str(tmp_path / "missing.fgds"), "--out", str(tmp_path)]
        )
        assert code == 3

    def test_missing_required_paths_is_config_error(self):
        assert main(["train", "--epochs", "1"]) == 1

    def test_config_file_drives_training(self, workspace, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(
            "# tiny run\n"
            f"dataset={workspace['data']}\n"
            f"out_dir={tmp_path / 'out'}\n"
            "feature_dim=8\n"
            "module_count=1\n"
            "epochs=1\n"
            "batch_size=4\n"
            "use_weighted_fusion=true\n"
            "seed=0  # inline comment\n"
        )
        assert main(["train", "--config", str(config)]) == 0
        assert os.path.exists(tmp_path / "out" / "metrics.csv")

    def test_config_file_parsing(self, tmp_path):
        path = tmp_path / "a.cfg"
        path.write_text("epochs=3\nlearning_rate=0.01\nuse_weighted_fusion=false\n# note\n")
        fields = parse_config_file(path)
        assert fields == {
            "epochs": 3,
            "learning_rate": 0.01,
            "use_weighted_fusion": False,
        }
        path.write_text("bogus_key=1\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)
        path.write_text("epochs three\n")
        with pytest.raises(ConfigError):
            parse_config_file(path)


class TestEval:
    def test_eval_prints_accuracy_and_confusion(self, workspace, capsys):
        code = main(
            [
                "eval",
                "--checkpoint", os.path.join(workspace["run"], "model.ckpt"),
                "--data", workspace["data"],
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "accuracy on val split" in out
        assert "confusion matrix" in out

    def test_checkpoint_dataset_mismatch(self, workspace, tmp_path, capsys):
        other = str(tmp_path / "other.fgds")
        main(
            [
                "gen", "--classes", "3", "--per-class", "4", "--frames", "8",
                "--size", "8", "--seed", "1", "--out", other,
            ]
        )
        code = main(
            [
                "eval",
                "--checkpoint", os.path.join(workspace["run"], "model.ckpt"),
                "--data", other,
            ]
        )
        assert code != 0


class TestGradcheckCommand:
    def test_stop_gradient_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "stop_gradient"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out and "FAIL" not in out

    def test_module_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "module"]) == 0
        assert "worst relative error" in capsys.readouterr().out

    def test_bad_scope_is_usage_error(self):
        assert main(["gradcheck", "--scope", "everything"]) == 1


class TestExport:
    def test_weight_csv_has_exactly_n_columns(self, workspace, tmp_path, capsys):
        out_dir = str(tmp_path / "exports")
        code = main(
            [
                "export",
                "--checkpoint", os.path.join(workspace["run"], "model.ckpt"),
                "--data", workspace["data"],
                "--kind", "weights",
                "--out", out_dir,
            ]
        )
        assert code == 0
        lines = open(os.path.join(out_dir, "weights.csv")).read().strip().split("\n")
        assert len(lines) == 3  # header, raw row, sigmoid row
        for line in lines:
            assert len(line.split(",")) == 4  # N columns exactly
        raw = np.array([float(v) for v in lines[1].split(",")])
        mapped = np.array([float(v) for v in lines[2].split(",")])
        assert abs(raw.sum() - 1.0) < 1e-9
        np.testing.assert_allclose(mapped, 1.0 / (1.0 + np.exp(-raw)), atol=1e-12)

    def test_heatmaps_are_valid_p2_with_max_255(self, workspace, tmp_path):
        out_dir = str(tmp_path / "maps")
        code = main(
            [
                "export",
                "--checkpoint", os.path.join(workspace["run"], "model.ckpt"),
                "--data", workspace["data"],
                "--kind", "heatmaps",
                "--out", out_dir,
                "--sample", "0",
            ]
        )
        assert code == 0
        files = sorted(os.listdir(out_dir))
        assert len(files) == 8  # 4 frames before + 4 after the graph module
        for name in files:
            tokens = open(os.path.join(out_dir, name)).read().split()
            assert tokens[0] == "P2"
            cols, rows, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
            assert maxval == 255
            pixels = [int(v) for v in tokens[4:]]
            assert len(pixels) == rows * cols
            assert all(0 <= v <= 255 for v in pixels)

    def test_sample_index_out_of_range(self, workspace, tmp_path):
        code = main(
            [
                "export",
                "--checkpoint", os.path.join(workspace["run"], "model.ckpt"),
                "--data", workspace["data"],
                "--kind", "heatmaps",
                "--out", str(tmp_path / "x"),
                "--sample", "99",
            ]
        )
        assert code == 1


class TestAblateCommand:
    def test_small_ablation_table(self, workspace, tmp_path, capsys):
        code = main(
            [
                "ablate", "--data", workspace["data"], "--out", str(tmp_path / "ab"),
                "--feature-dim", "8", "--epochs", "1", "--batch-size", "4",
                "--seed", "0", "--variants", "0,1f",
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "backbone only" in out
        assert "graph module x1 + weighted fusion" in out
        assert os.path.exists(tmp_path / "ab" / "ablation.csv")

    def test_bad_variant_grammar(self, workspace, tmp_path):
        code = main(
            [
                "ablate", "--data", workspace["data"], "--out", str(tmp_path),
                "--variants", "0,abc",
            ]
        )
        assert code == 1
