"""Tests for the command-line interface."""

from dataclasses import replace

import pandas as pd
import pytest

from maskkit import cli
from maskkit.cli import (
    EXIT_CONFIG,
    EXIT_DIVERGED,
    EXIT_GRADCHECK,
    EXIT_INTERRUPTED,
    EXIT_IO,
    EXIT_OK,
    EXIT_UNEXPECTED,
    build_config,
    create_parser,
    run,
    run_pipeline,
)
from maskkit.config import ConfigurationError, load_config
from maskkit.corpus import generate_corpus
from maskkit.gradcheck import GradcheckResult
from maskkit.models import Command
from maskkit.trainer import TrainingDivergedError


def _args(*argv):
    return create_parser().parse_args(list(argv))


class TestBuildConfig:
    """Tests for command-line overrides."""

    def test_defaults(self):
        """Test that a bare command uses the default configuration."""
        config = build_config(_args("bench"))
        assert config.command is Command.BENCH
        assert config.train.k0 == 3
        assert not config.eval.flip

    def test_overrides(self):
        """Test that flags reach every section they affect."""
        config = build_config(_args(
            "train", "--steps", "5", "--seed", "3", "--k0", "4", "--image-size", "96",
            "--lambda-kp", "0.5", "--no-context", "--out-dir", "runs/a",
        ))
        assert config.train.steps == 5
        assert config.seed == 3
        assert config.train.init_seed == 3
        assert config.train.augment_seed == 3
        assert config.train.k0 == 4
        assert config.eval.k0 == 4
        assert config.image_size == 96
        assert config.model.input_size == 96
        assert config.loss.lambda_kp == 0.5
        assert config.model.use_context is False
        assert str(config.checkpoint_path) == "runs/a/model.mkfc"

    def test_fusion_flags(self):
        """Test the test-time fusion switches."""
        config = build_config(_args("eval", "--multi-scale", "--flip"))
        assert config.eval.multi_scale
        assert config.eval.flip

    def test_invalid_override(self):
        """Test that an out-of-range value becomes a configuration error."""
        with pytest.raises(ConfigurationError, match="image_size"):
            build_config(_args("gen", "--image-size", "8"))

    def test_config_file(self, temp_data_dir):
        """Test that flags override values loaded from YAML."""
        path = temp_data_dir / "run.yaml"
        path.write_text("scenes: 7\ntrain:\n  steps: 11\n")
        config = build_config(_args("train", "-c", str(path), "--steps", "2"))
        assert config.scenes == 7
        assert config.train.steps == 2


class TestRun:
    """Tests for argument handling and exit codes."""

    def test_write_template(self, temp_data_dir):
        """Test that the written template loads back."""
        path = temp_data_dir / "maskkit.yaml"
        assert run(_args("--write-template", str(path))) == EXIT_OK
        assert load_config(str(path)).command is Command.GEN

    def test_missing_command(self):
        """Test that no command is a usage error."""
        assert run(_args()) == EXIT_CONFIG

    def test_bad_override(self):
        """Test that invalid flags exit with the configuration code."""
        assert run(_args("gen", "--threads", "0")) == EXIT_CONFIG

    def test_missing_config_file(self, temp_data_dir):
        """Test that an absent YAML file exits with the configuration code."""
        assert run(_args("gen", "-c", str(temp_data_dir / "absent.yaml"))) == EXIT_CONFIG

    def test_eval_without_model(self, temp_data_dir):
        """Test that evaluating before training is a configuration error."""
        assert run(_args("eval", "--out-dir", str(temp_data_dir))) == EXIT_CONFIG

    def test_train_without_corpus(self, temp_data_dir):
        """Test that training before generation is an I/O error."""
        assert run(_args("train", "--out-dir", str(temp_data_dir))) == EXIT_IO


class TestPipeline:
    """Tests for whole subcommands on a tiny run."""

    def test_gen_train_eval(self, tiny_config):
        """Test the three data steps end to end."""
        out = tiny_config.out_dir
        assert run_pipeline(replace(tiny_config, command=Command.GEN, threads=1)) == EXIT_OK
        assert run_pipeline(replace(tiny_config, command=Command.TRAIN)) == EXIT_OK
        trace = pd.read_csv(f"{out}/loss_trace.csv")
        assert list(trace["step"]) == [0, 1, 2]
        assert tiny_config.checkpoint_path.exists()

        assert run_pipeline(replace(tiny_config, command=Command.EVAL)) == EXIT_OK
        for name in ("detections.jsonl", "summary.yaml", "pr_curve.csv", "ced_curve.csv"):
            assert (tiny_config.checkpoint_path.parent / "eval" / name).exists()

    def test_pilot(self, tiny_config):
        """Test that the pilot writes its bounds and sweep tables."""
        assert run_pipeline(replace(tiny_config, command=Command.GEN, threads=1)) == EXIT_OK
        assert run_pipeline(replace(tiny_config, command=Command.PILOT)) == EXIT_OK
        bounds = pd.read_csv(f"{tiny_config.out_dir}/pilot.csv")
        assert list(bounds["name"]) == ["detection_loss_ratio", "ap", "mean_nme", "fused_ap"]
        sweep = pd.read_csv(f"{tiny_config.out_dir}/pilot_sweep.csv")
        assert list(sweep["lambda_kp"]) == [0.05, 0.25, 1.0]

    def test_pilot_divergence_exit(self, tiny_config, monkeypatch):
        """Test that a diverging pilot run exits with 4."""
        generate_corpus(replace(tiny_config, threads=1))

        def diverge(*args):
            raise TrainingDivergedError("loss exploded", [])

        monkeypatch.setattr(cli, "run_pilot", diverge)
        assert run_pipeline(replace(tiny_config, command=Command.PILOT)) == EXIT_DIVERGED

    def test_divergence_exit(self, tiny_config, monkeypatch):
        """Test that divergence writes the partial trace and exits with 4."""
        generate_corpus(replace(tiny_config, threads=1))
        rows = [{"step": 0, "lr": 1e-4, "l_cls": 1.0, "l_box": 0.0, "l_kp": 0.0, "l_total": 1.0,
                 "n_pos": 1, "n_rois": 1}]

        def diverge(*args):
            raise TrainingDivergedError("loss exploded", rows)

        monkeypatch.setattr(cli, "train_toy", diverge)
        assert run_pipeline(replace(tiny_config, command=Command.TRAIN)) == EXIT_DIVERGED
        assert len(pd.read_csv(f"{tiny_config.out_dir}/loss_trace.csv")) == 1
        assert not tiny_config.checkpoint_path.exists()

    def test_gradcheck_failure_exit(self, tiny_config, monkeypatch):
        """Test that a failed gradient check exits with 5 and still writes its table."""
        monkeypatch.setattr(cli, "run_gradcheck", lambda *args: [GradcheckResult("conv2d", 1, 0.5, 1e-4)])
        assert run_pipeline(replace(tiny_config, command=Command.GRADCHECK)) == EXIT_GRADCHECK
        table = pd.read_csv(f"{tiny_config.out_dir}/gradcheck.csv")
        assert list(table["name"]) == ["conv2d"]

    def test_unexpected_error(self, tiny_config, monkeypatch):
        """Test that unknown failures map to exit code 1."""

        def boom(*args):
            raise RuntimeError("boom")

        monkeypatch.setattr(cli, "run_bench", boom)
        assert run_pipeline(replace(tiny_config, command=Command.BENCH)) == EXIT_UNEXPECTED

    def test_interrupt(self, tiny_config, monkeypatch):
        """Test that Ctrl-C maps to exit code 130."""

        def interrupted(*args):
            raise KeyboardInterrupt

        monkeypatch.setattr(cli, "run_bench", interrupted)
        assert run_pipeline(replace(tiny_config, command=Command.BENCH)) == EXIT_INTERRUPTED
