"""
End-to-end training of the toy detector: augmentation, anchor matching, multi-task
loss, backpropagation and SGD, with divergence detection and a loss trace.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from . import autodiff as ad
from .geometry import AnchorGrid, Box, as_box_array, decode_deltas_array, encode_deltas_array, generate_anchors
from .losses import LossReport, focal_loss, keypoint_ce_loss, sigmoid, smooth_l1_loss, total_loss
from .matching import match_anchors
from .models import AugmentConfig, RunConfig
from .network import ToyMaskFace, build_toy_maskface
from .optim import NonFiniteGradientError, OptimizerState, sgd_step
from .roialign import encode_keypoint_target
from .suppression import Detection, Proposal, filter_proposals
from .synthdata import Scene, augment

logger = logging.getLogger(__name__)

MIN_ROI_SIDE = 1.0


class TrainingDivergedError(RuntimeError):
    """Loss stayed above the divergence bound for too many consecutive steps."""

    def __init__(self, message: str, trace: list[dict]):
        super().__init__(message)
        self.trace = trace


@dataclass
class ImageLoss:
    """Loss report of one image plus the gradient seeds that backpropagate it."""

    report: LossReport
    seeds: list[tuple[ad.Tensor, np.ndarray]]
    n_rois: int


@dataclass
class TrainStats:
    """Statistics for a training run."""

    steps: int = 0
    skipped_steps: int = 0
    lr_decays: int = 0
    initial_loss: float | None = None
    final_loss: float | None = None
    trace: list[dict] = field(default_factory=list)
    start_time: datetime | None = None
    end_time: datetime | None = None

    @property
    def elapsed(self) -> timedelta:
        if not self.start_time:
            return timedelta(0)
        return (self.end_time or datetime.now()) - self.start_time


def toy_augment_config(augment: AugmentConfig, input_size: int) -> AugmentConfig:
    """Shrink crop sizes (and landmark box targets proportionally) to the toy input size."""
    ratio = input_size / augment.landmark_crop
    return replace(
        augment,
        detection_crop=input_size,
        landmark_crop=input_size,
        box_size_range=tuple(v * ratio for v in augment.box_size_range),
    )


def decode_candidates(
    grid: AnchorGrid,
    logits: np.ndarray,
    deltas: np.ndarray,
    image_w: int,
    image_h: int,
    top_n: int,
    conf_floor: float = 0.0,
) -> list[Detection]:
    """Top-scoring anchors decoded to image-clipped boxes, ties broken by anchor index."""
    scores = sigmoid(logits)
    order = np.argsort(-scores, kind="stable")[:top_n]
    order = order[scores[order] >= conf_floor]
    boxes, _ = decode_deltas_array(grid.boxes[order], deltas[order])
    boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, image_w)
    boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, image_h)
    keep = (boxes[:, 2] - boxes[:, 0] >= MIN_ROI_SIDE) & (boxes[:, 3] - boxes[:, 1] >= MIN_ROI_SIDE)
    return [Detection(Box(*boxes[i]), float(scores[order[i]])) for i in np.flatnonzero(keep)]


def training_proposals(
    dets: Sequence[Detection],
    gts: Sequence[Box],
    cfg: RunConfig,
) -> list[Proposal]:
    """Filtered proposals matched to ground truth, optionally led by the ground-truth boxes."""
    train = cfg.train
    props = filter_proposals(dets, train.proposal_conf, train.proposal_nms, gts, train.proposal_iou)
    if train.include_gt_proposals:
        props = [Proposal(b, 1.0, j) for j, b in enumerate(gts)] + props
    return props[: train.max_keypoint_rois]


def compute_image_loss(model: ToyMaskFace, scene: Scene, cfg: RunConfig) -> ImageLoss:
    """Forward one image, evaluate the three losses and return backprop seeds."""
    h, w = scene.height, scene.width
    grid = generate_anchors(cfg.anchors, w, h)
    gts = scene.boxes
    match = match_anchors(grid, gts, cfg.train.pos_iou, cfg.train.neg_iou, cfg.train.low_quality_matching)

    out = model.forward(scene.image)
    logits, deltas = out.cls_logits, out.box_deltas
    cls_term = focal_loss(logits, match, cfg.loss)

    targets = np.zeros_like(deltas)
    pos = match.positive
    if pos.any():
        targets[pos] = encode_deltas_array(grid.boxes[pos], as_box_array(gts)[match.gt_index[pos]])
    box_term = smooth_l1_loss(deltas, targets, match, cfg.loss)

    dets = decode_candidates(grid, logits, deltas, w, h, cfg.train.pre_nms_top_n)
    proposals = training_proposals(dets, gts, cfg) if gts else []
    kp_value, kp_seeds = 0.0, []
    if proposals:
        masks = model.keypoint_forward(out.features, [p.box for p in proposals], cfg.train.k0)
        kp_targets = [
            encode_keypoint_target(
                p.box,
                scene.faces[p.gt_index].landmarks,
                model.cfg.mask_size,
                scene.faces[p.gt_index].visible,
            )
            for p in proposals
        ]
        kp_term = keypoint_ce_loss(np.stack([m.data for m in masks]), kp_targets, cfg.loss)
        kp_value = kp_term.value
        if cfg.loss.lambda_kp > 0:
            kp_seeds = [(m, cfg.loss.lambda_kp * g) for m, g in zip(masks, kp_term.grad)]

    parts = (cls_term.value, box_term.value, kp_value)
    if not np.all(np.isfinite(parts)):
        raise NonFiniteGradientError(["loss"])
    report = total_loss(parts, cfg.loss, match.n_pos)
    seeds = out.cls_seeds(cls_term.grad) + out.box_seeds(box_term.grad) + kp_seeds
    return ImageLoss(report=report, seeds=seeds, n_rois=len(proposals))


class ToyTrainer:
    """
    Trains a ToyMaskFace on in-memory scenes.

    Every step draws its scenes and augmentation seeds from
    ``SeedSequence([augment_seed, step])``, so a run is a pure function of the scene
    corpus, ``init_seed`` and ``augment_seed``.
    """

    def __init__(self, config: RunConfig, scenes: Sequence[Scene], model: ToyMaskFace | None = None):
        if not scenes:
            raise ValueError("training needs at least one scene")
        self.config = config
        self.scenes = list(scenes)
        self.model = model or build_toy_maskface(config.model, config.train.init_seed)
        self.optimizer = OptimizerState.from_config(config.schedule)
        self._augment = toy_augment_config(config.augment, config.model.input_size)
        self._stats = TrainStats()

    @property
    def stats(self) -> TrainStats:
        return self._stats

    def _batch(self, step: int) -> list[Scene]:
        rng = np.random.default_rng(np.random.SeedSequence([self.config.train.augment_seed, step]))
        size = self.config.train.batch_size
        picks = rng.integers(len(self.scenes), size=size)
        seeds = rng.integers(0, 2**31 - 1, size=size)
        return [augment(self.scenes[i], self._augment, int(s), self.config.anchors) for i, s in zip(picks, seeds)]

    def step(self, step: int) -> dict:
        """Run one optimization step and return its trace row."""
        model = self.model
        batch = self._batch(step)
        lr = self.optimizer.lr
        model.zero_grad()
        reports, n_rois = [], 0
        for scene in batch:
            loss = compute_image_loss(model, scene, self.config)
            scale = 1.0 / len(batch)
            ad.backward([(t, g * scale) for t, g in loss.seeds])
            reports.append(loss.report)
            n_rois += loss.n_rois

        params = dict(model.trainable())
        grads = {n: p.grad for n, p in params.items() if p.grad is not None}
        updated = sgd_step(self.optimizer, {n: p.data for n, p in params.items()}, grads)
        for name, value in updated.items():
            params[name].data = value

        return {
            "step": step,
            "lr": lr,
            "l_cls": float(np.mean([r.l_cls for r in reports])),
            "l_box": float(np.mean([r.l_box for r in reports])),
            "l_kp": float(np.mean([r.l_kp for r in reports])),
            "l_total": float(np.mean([r.l_total for r in reports])),
            "n_pos": int(sum(r.n_pos for r in reports)),
            "n_rois": n_rois,
        }

    def train(self) -> TrainStats:
        cfg = self.config.train
        self._stats = TrainStats(start_time=datetime.now())
        self._log_start()
        smoothed = None
        streak = 0
        for step in range(cfg.steps):
            try:
                row = self.step(step)
            except NonFiniteGradientError as e:
                logger.warning("Step %d skipped: %s", step, e)
                self.optimizer.step += 1
                self.optimizer.skipped += 1
                self._stats.skipped_steps += 1
                continue

            self._stats.trace.append(row)
            self._stats.steps += 1
            loss = row["l_total"]
            if self._stats.initial_loss is None:
                self._stats.initial_loss = loss
            smoothed = loss if smoothed is None else cfg.loss_smoothing * smoothed + (1 - cfg.loss_smoothing) * loss
            self.optimizer.schedule.observe(step, smoothed)

            streak = streak + 1 if loss > cfg.divergence_factor * self._stats.initial_loss else 0
            if streak >= cfg.divergence_patience:
                self._stats.end_time = datetime.now()
                raise TrainingDivergedError(
                    f"loss above {cfg.divergence_factor}x its initial value "
                    f"({self._stats.initial_loss:.4f}) for {streak} steps at step {step}",
                    self._stats.trace,
                )

            if step % cfg.log_every == 0 or step == cfg.steps - 1:
                logger.info(
                    "[%d/%d] lr %.2e | loss %.4f (cls %.4f box %.4f kp %.4f) | pos %d | rois %d",
                    step + 1, cfg.steps, row["lr"], loss, row["l_cls"], row["l_box"], row["l_kp"],
                    row["n_pos"], row["n_rois"],
                )

        self._stats.final_loss = smoothed
        self._stats.lr_decays = self.optimizer.schedule.decays
        self._stats.end_time = datetime.now()
        self._log_summary()
        return self._stats

    def _log_start(self) -> None:
        cfg = self.config
        logger.info("")
        logger.info("#" * 60)
        logger.info("Starting training: %d steps on %d scenes", cfg.train.steps, len(self.scenes))
        logger.info("Batch size: %d | lambda_kp: %g | k0: %d", cfg.train.batch_size, cfg.loss.lambda_kp, cfg.train.k0)
        logger.info("Context modules: %s | Low-quality matching: %s",
                    cfg.model.use_context, cfg.train.low_quality_matching)
        logger.info("Seeds: data %d | init %d | augment %d",
                    cfg.seed, cfg.train.init_seed, cfg.train.augment_seed)
        logger.info("#" * 60)

    def _log_summary(self) -> None:
        s = self._stats
        logger.info("")
        logger.info("=" * 60)
        logger.info("TRAINING COMPLETE")
        logger.info("Steps: %d | Skipped: %d | LR decays: %d", s.steps, s.skipped_steps, s.lr_decays)
        if s.initial_loss is not None and s.final_loss is not None:
            logger.info("Loss: %.4f -> %.4f (smoothed) | Time: %s", s.initial_loss, s.final_loss, s.elapsed)
        logger.info("=" * 60)


def train_toy(scenes: Sequence[Scene], config: RunConfig) -> tuple[ToyMaskFace, TrainStats]:
    """Build a model from ``config.train.init_seed`` and train it on ``scenes``."""
    trainer = ToyTrainer(config, scenes)
    stats = trainer.train()
    return trainer.model, stats
