"""Tests for toy training."""

from dataclasses import replace

import numpy as np
import pytest

from maskkit import autodiff as ad
from maskkit.geometry import Box, generate_anchors
from maskkit.models import AnchorConfig, AugmentConfig, LossConfig, RunConfig, ToyModelConfig, TrainConfig
from maskkit.network import build_toy_maskface
from maskkit.optim import NonFiniteGradientError
from maskkit.pilot import detection_loss_ratio
from maskkit.suppression import Detection
from maskkit.synthdata import Scene, generate_scene
from maskkit.trainer import (
    ToyTrainer,
    TrainingDivergedError,
    compute_image_loss,
    decode_candidates,
    toy_augment_config,
    train_toy,
    training_proposals,
)


@pytest.fixture
def scenes():
    return [generate_scene(seed, 64, 64, 1, (24.0, 36.0)) for seed in (11, 12)]


def _row(step, loss):
    return {
        "step": step, "lr": 1e-3, "l_cls": loss, "l_box": 0.0, "l_kp": 0.0,
        "l_total": loss, "n_pos": 1, "n_rois": 1,
    }


class TestDecodeCandidates:
    """Tests for turning raw head outputs into scored boxes."""

    @pytest.fixture
    def grid(self):
        return generate_anchors(AnchorConfig(), 64, 64)

    def test_single_confident_anchor(self, grid):
        """Test that zero deltas return the image-clipped anchor."""
        logits = np.full(len(grid), -10.0)
        logits[0] = 5.0
        dets = decode_candidates(grid, logits, np.zeros((len(grid), 4)), 64, 64, top_n=1)
        assert len(dets) == 1
        b = dets[0].box
        assert np.allclose((b.x1, b.y1, b.x2, b.y2), (0.0, 0.0, 10.0, 10.0))
        assert dets[0].score == pytest.approx(1 / (1 + np.exp(-5.0)))

    def test_ties_keep_anchor_order(self, grid):
        """Test that equal scores are ranked by anchor index."""
        dets = decode_candidates(grid, np.zeros(len(grid)), np.zeros((len(grid), 4)), 64, 64, top_n=3)
        expected = np.clip(grid.boxes[:3], 0.0, 64.0)
        got = np.array([(d.box.x1, d.box.y1, d.box.x2, d.box.y2) for d in dets])
        assert np.allclose(got, expected)

    def test_confidence_floor(self, grid):
        """Test that candidates below the floor are dropped."""
        logits = np.full(len(grid), -10.0)
        dets = decode_candidates(grid, logits, np.zeros((len(grid), 4)), 64, 64, top_n=10, conf_floor=0.5)
        assert dets == []


class TestTrainingProposals:
    """Tests for keypoint RoI selection during training."""

    def test_ground_truth_leads_and_is_capped(self, tiny_config):
        """Test that gt boxes come first and the list is capped."""
        gts = [Box(0, 0, 10, 10), Box(20, 20, 40, 40), Box(45, 45, 60, 60)]
        props = training_proposals([], gts, tiny_config)
        assert len(props) == 2
        assert [p.gt_index for p in props] == [0, 1]
        assert props[0].box == gts[0]

    def test_without_ground_truth_proposals(self, tiny_config):
        """Test that only matched detections remain when gt boxes are excluded."""
        cfg = replace(tiny_config, train=replace(tiny_config.train, include_gt_proposals=False))
        gts = [Box(10, 10, 30, 30)]
        dets = [Detection(Box(11, 10, 31, 30), 0.9), Detection(Box(40, 40, 60, 60), 0.9)]
        props = training_proposals(dets, gts, cfg)
        assert len(props) == 1
        assert props[0].gt_index == 0


class TestImageLoss:
    """Tests for the per-image multi-task loss."""

    def test_face_scene(self, tiny_config, scenes):
        """Test a finite loss with keypoint RoIs on a scene with a face."""
        model = build_toy_maskface(tiny_config.model, 0)
        loss = compute_image_loss(model, scenes[0], tiny_config)
        assert np.isfinite(loss.report.l_total)
        assert loss.report.n_pos >= 1
        assert loss.n_rois >= 1
        assert loss.seeds

    def test_zero_keypoint_weight_stops_keypoint_gradients(self, tiny_config, scenes):
        """Test that lambda_kp = 0 leaves every keypoint-head gradient at zero."""
        cfg = replace(tiny_config, loss=replace(tiny_config.loss, lambda_kp=0.0))
        model = build_toy_maskface(cfg.model, 0)
        model.zero_grad()
        loss = compute_image_loss(model, scenes[0], cfg)
        ad.backward(loss.seeds)
        assert loss.n_rois >= 1
        assert loss.report.l_kp > 0.0
        assert loss.report.l_total == pytest.approx(loss.report.l_cls + loss.report.l_box)
        keypoint = {n: p for n, p in model.trainable() if n.startswith("keypoint.")}
        assert keypoint
        for p in keypoint.values():
            assert p.grad is None or not np.any(p.grad)
        assert model.params["head.cls.weight"].grad is not None

    def test_faceless_scene(self, tiny_config):
        """Test that an empty scene has no keypoint term."""
        model = build_toy_maskface(tiny_config.model, 0)
        scene = Scene(image=np.full((64, 64, 3), 0.5))
        loss = compute_image_loss(model, scene, tiny_config)
        assert loss.n_rois == 0
        assert loss.report.l_kp == 0.0
        assert np.isfinite(loss.report.l_total)


class TestToyTrainer:
    """Tests for the training loop."""

    def test_augment_config_shrinks_to_input(self):
        """Test crop sizes and landmark box targets follow the toy input size."""
        cfg = toy_augment_config(AugmentConfig(), 48)
        assert cfg.detection_crop == 48
        assert cfg.landmark_crop == 48
        assert cfg.box_size_range == pytest.approx((15.0, 45.0))

    def test_needs_scenes(self, tiny_config):
        """Test that an empty corpus is rejected."""
        with pytest.raises(ValueError, match="at least one scene"):
            ToyTrainer(tiny_config, [])

    def test_short_run(self, tiny_config, scenes):
        """Test a few steps produce a complete trace."""
        model, stats = train_toy(scenes, tiny_config)
        assert stats.steps == 3
        assert [row["step"] for row in stats.trace] == [0, 1, 2]
        assert stats.trace[0]["lr"] == pytest.approx(tiny_config.schedule.warmup_start)
        assert all(np.isfinite(row["l_total"]) for row in stats.trace)
        assert stats.initial_loss == stats.trace[0]["l_total"]
        assert stats.final_loss is not None
        assert model is not None

    def test_runs_are_reproducible(self, tiny_config, scenes):
        """Test that the same seeds give identical traces and weights."""
        model_a, stats_a = train_toy(scenes, tiny_config)
        model_b, stats_b = train_toy(scenes, tiny_config)
        assert stats_a.trace == stats_b.trace
        state_a, state_b = model_a.state_dict(), model_b.state_dict()
        assert all(np.array_equal(state_a[k], state_b[k]) for k in state_a)

    def test_training_moves_weights(self, tiny_config, scenes):
        """Test that trainable tensors change and frozen ones do not."""
        trainer = ToyTrainer(tiny_config, scenes)
        before = trainer.model.state_dict()
        trainer.train()
        after = trainer.model.state_dict()
        assert not np.array_equal(before["head.cls.weight"], after["head.cls.weight"])
        assert np.array_equal(before["backbone.stem.weight"], after["backbone.stem.weight"])

    def test_divergence(self, tiny_config, scenes, monkeypatch):
        """Test that a loss stuck far above its start aborts with the trace."""
        cfg = replace(tiny_config, train=replace(tiny_config.train, steps=6, divergence_patience=2))
        trainer = ToyTrainer(cfg, scenes)
        monkeypatch.setattr(trainer, "step", lambda step: _row(step, 1.0 if step == 0 else 100.0 * step))
        with pytest.raises(TrainingDivergedError) as exc_info:
            trainer.train()
        assert [row["step"] for row in exc_info.value.trace] == [0, 1, 2]

    def test_non_finite_steps_are_skipped(self, tiny_config, scenes, monkeypatch):
        """Test that a non-finite step is counted and training continues."""
        trainer = ToyTrainer(tiny_config, scenes)

        def fake_step(step):
            if step == 1:
                raise NonFiniteGradientError(["loss"])
            return _row(step, 1.0)

        monkeypatch.setattr(trainer, "step", fake_step)
        stats = trainer.train()
        assert stats.steps == 2
        assert stats.skipped_steps == 1
        assert trainer.optimizer.skipped == 1
        assert [row["step"] for row in stats.trace] == [0, 2]


class TestRegressionBound:
    """Reduced-scale pilot: detection loss must keep falling at least this far."""

    STEPS = 600
    MAX_RATIO = 0.6

    def test_detection_loss_drops(self):
        """Test 600 detection-only steps on 32 single-face 64 px scenes."""
        scenes = [generate_scene(seed, 64, 64, 1, (24.0, 36.0)) for seed in range(32)]
        config = RunConfig(
            image_size=64,
            model=ToyModelConfig(input_size=64),
            loss=LossConfig(lambda_kp=0.0),
            train=TrainConfig(steps=self.STEPS, log_every=100),
        )
        _, stats = train_toy(scenes, config)
        assert stats.steps + stats.skipped_steps == self.STEPS
        assert detection_loss_ratio(stats.trace) < self.MAX_RATIO
