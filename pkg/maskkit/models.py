"""
Configuration records for the maskkit pipeline.

Every record validates its invariants in ``__post_init__`` and raises ``ValueError``;
``config.load_config`` turns those into ``ConfigurationError`` for the CLI.
"""

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class AugmentMode(Enum):
    """Which training augmentation pipeline to apply."""

    DETECTION = "detection"  # scale jitter, 640 crop, flip, color
    LANDMARK = "landmark"    # box-size resize, 480 crop, rotation, flip, color

    @classmethod
    def from_string(cls, value: str) -> "AugmentMode":
        """Create AugmentMode from string value."""
        try:
            return cls(value.lower())
        except ValueError:
            valid = ", ".join(f"'{m.value}'" for m in cls)
            raise ValueError(f"Invalid augment mode: '{value}'. Must be one of: {valid}")


class NmeNormalizer(Enum):
    """Face-size normalizer for NME."""

    BBOX_SQRT_AREA = "bbox_sqrt_area"
    INTER_OCULAR = "inter_ocular"

    @classmethod
    def from_string(cls, value: str) -> "NmeNormalizer":
        """Create NmeNormalizer from string value."""
        try:
            return cls(value.lower())
        except ValueError:
            valid = ", ".join(f"'{n.value}'" for n in cls)
            raise ValueError(f"Invalid NME normalizer: '{value}'. Must be one of: {valid}")


class Command(Enum):
    """Pipeline subcommands."""

    GEN = "gen"
    TRAIN = "train"
    EVAL = "eval"
    BENCH = "bench"
    GRADCHECK = "gradcheck"
    PILOT = "pilot"

    @classmethod
    def from_string(cls, value: str) -> "Command":
        """Create Command from string value."""
        try:
            return cls(value.lower())
        except ValueError:
            valid = ", ".join(f"'{c.value}'" for c in cls)
            raise ValueError(f"Invalid command: '{value}'. Must be one of: {valid}")


class Compression(Enum):
    """Parquet compression algorithm for corpus indexes."""

    ZSTD = "zstd"        # Best compression ratio, good speed (recommended)
    SNAPPY = "snappy"    # Fast, moderate compression
    GZIP = "gzip"        # Good compression, slower
    LZ4 = "lz4"          # Fastest, lower compression
    NONE = "none"        # No compression

    @classmethod
    def from_string(cls, value: str) -> "Compression":
        """Create Compression from string value."""
        try:
            return cls(value.lower())
        except ValueError:
            valid = ", ".join(f"'{c.value}'" for c in cls)
            raise ValueError(f"Invalid compression: '{value}'. Must be one of: {valid}")


def _check_range(name: str, lo: float, hi: float) -> None:
    if lo > hi:
        raise ValueError(f"{name} must be ordered (low <= high), got ({lo}, {hi})")


def _check_probability(name: str, value: float) -> None:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name} must be in [0, 1], got {value}")


def _check_fraction(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must be in (0, 1), got {value}")


@dataclass
class AnchorConfig:
    """Square anchors tiled over five pyramid levels (strides 4 to 64)."""

    base_areas: tuple[float, ...] = (16.0**2, 32.0**2, 64.0**2, 128.0**2, 256.0**2)
    scales: tuple[float, ...] = (2.0**0, 2.0 ** (1 / 3), 2.0 ** (2 / 3))
    strides: tuple[int, ...] = (4, 8, 16, 32, 64)
    aspect_ratios: tuple[float, ...] = (1.0,)

    def __post_init__(self):
        self.base_areas = tuple(float(a) for a in self.base_areas)
        self.scales = tuple(float(s) for s in self.scales)
        self.strides = tuple(int(s) for s in self.strides)
        self.aspect_ratios = tuple(float(r) for r in self.aspect_ratios)
        if len(self.base_areas) != len(self.strides):
            raise ValueError(
                f"base_areas and strides must have the same length, "
                f"got {len(self.base_areas)} and {len(self.strides)}"
            )
        if not self.base_areas or not self.scales:
            raise ValueError("base_areas and scales must not be empty")
        if any(a <= 0 for a in self.base_areas) or any(s <= 0 for s in self.scales):
            raise ValueError("base_areas and scales must be positive")
        if any(s <= 0 for s in self.strides):
            raise ValueError(f"strides must be positive, got {self.strides}")
        if self.aspect_ratios != (1.0,):
            raise ValueError(f"only square anchors are supported, got aspect_ratios={self.aspect_ratios}")

    @property
    def num_levels(self) -> int:
        return len(self.strides)

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.aspect_ratios)

    @property
    def smallest_side(self) -> float:
        return math.sqrt(min(self.base_areas)) * min(self.scales)

    @property
    def largest_side(self) -> float:
        return math.sqrt(max(self.base_areas)) * max(self.scales)


@dataclass
class LossConfig:
    """Weights and constants of the multi-task loss."""

    alpha: float = 0.25
    gamma: float = 2.0
    lambda_kp: float = 0.25
    smooth_l1_beta: float = 1.0
    epsilon: float = 1e-12

    def __post_init__(self):
        _check_fraction("alpha", self.alpha)
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.lambda_kp < 0:
            raise ValueError(f"lambda_kp must be >= 0, got {self.lambda_kp}")
        if self.smooth_l1_beta <= 0:
            raise ValueError(f"smooth_l1_beta must be > 0, got {self.smooth_l1_beta}")
        if not 0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must be in (0, 0.5), got {self.epsilon}")


@dataclass
class AugmentConfig:
    """Training-time augmentation parameters for both pipelines."""

    mode: AugmentMode = AugmentMode.DETECTION
    scale_range: tuple[float, float] = (0.5, 2.5)
    detection_crop: int = 640
    bbox_crop_prob: float = 0.5
    hflip_prob: float = 0.5
    gain_range: tuple[float, float] = (0.8, 1.2)
    bias_range: tuple[float, float] = (-0.1, 0.1)
    box_size_range: tuple[float, float] = (150.0, 450.0)
    landmark_crop: int = 480
    rotation_range: float = 30.0  # degrees, symmetric

    def __post_init__(self):
        if isinstance(self.mode, str):
            self.mode = AugmentMode.from_string(self.mode)
        self.scale_range = tuple(float(v) for v in self.scale_range)
        self.gain_range = tuple(float(v) for v in self.gain_range)
        self.bias_range = tuple(float(v) for v in self.bias_range)
        self.box_size_range = tuple(float(v) for v in self.box_size_range)
        _check_range("scale_range", *self.scale_range)
        _check_range("gain_range", *self.gain_range)
        _check_range("bias_range", *self.bias_range)
        _check_range("box_size_range", *self.box_size_range)
        if self.scale_range[0] <= 0 or self.box_size_range[0] <= 0:
            raise ValueError("scale_range and box_size_range must be positive")
        _check_probability("bbox_crop_prob", self.bbox_crop_prob)
        _check_probability("hflip_prob", self.hflip_prob)
        if self.detection_crop < 1 or self.landmark_crop < 1:
            raise ValueError("crop sizes must be positive")
        if self.rotation_range < 0:
            raise ValueError(f"rotation_range must be >= 0, got {self.rotation_range}")

    @property
    def crop_size(self) -> int:
        return self.detection_crop if self.mode is AugmentMode.DETECTION else self.landmark_crop


@dataclass
class ToyModelConfig:
    """Shapes of the desk-scale detector."""

    backbone_channels: tuple[int, ...] = (8, 8, 8, 8)
    fpn_channels: int = 16
    context_widths: tuple[int, int, int] = (8, 4, 4)
    use_context: bool = True
    keypoint_convs: int = 2
    keypoint_channels: int = 8
    num_keypoints: int = 5
    pooled_size: int = 14
    mask_size: int = 56
    input_size: int = 160
    anchors_per_cell: int = 3
    prior_prob: float = 0.01

    def __post_init__(self):
        self.backbone_channels = tuple(int(c) for c in self.backbone_channels)
        self.context_widths = tuple(int(c) for c in self.context_widths)
        if len(self.backbone_channels) != 4:
            raise ValueError(f"backbone_channels needs one width per C2..C5, got {self.backbone_channels}")
        if len(self.context_widths) != 3:
            raise ValueError(f"context_widths needs three branch widths, got {self.context_widths}")
        widths = (*self.backbone_channels, *self.context_widths, self.fpn_channels, self.keypoint_channels)
        if any(w < 1 for w in widths):
            raise ValueError("all channel widths must be positive")
        if self.mask_size != 4 * self.pooled_size:
            raise ValueError(
                f"mask_size must be 4 x pooled_size (deconv x2 then bilinear x2), "
                f"got mask_size={self.mask_size}, pooled_size={self.pooled_size}"
            )
        if self.keypoint_convs < 0 or self.num_keypoints < 1 or self.input_size < 1:
            raise ValueError("keypoint_convs, num_keypoints and input_size must be valid counts")
        _check_fraction("prior_prob", self.prior_prob)

    @property
    def head_channels(self) -> int:
        """Channels of M2..M6 (concatenated context branches, or raw FPN output)."""
        return sum(self.context_widths) if self.use_context else self.fpn_channels


@dataclass
class ScheduleConfig:
    """SGD hyperparameters and the warmup + plateau step-decay schedule."""

    warmup_start: float = 1e-4
    peak_lr: float = 2e-3
    warmup_steps: int = 200
    decay_factor: float = 0.1
    min_lr: float = 1e-4
    patience: int = 300
    momentum: float = 0.9
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not 0 < self.warmup_start <= self.peak_lr:
            raise ValueError(f"need 0 < warmup_start <= peak_lr, got {self.warmup_start}, {self.peak_lr}")
        if not 0 < self.min_lr <= self.peak_lr:
            raise ValueError(f"need 0 < min_lr <= peak_lr, got {self.min_lr}, {self.peak_lr}")
        _check_fraction("decay_factor", self.decay_factor)
        if self.warmup_steps < 0 or self.patience < 1:
            raise ValueError("warmup_steps must be >= 0 and patience >= 1")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ValueError("momentum must be in [0, 1) and weight_decay >= 0")


@dataclass
class TrainConfig:
    """End-to-end toy training settings."""

    steps: int = 2000
    batch_size: int = 1
    k0: int = 3
    pos_iou: float = 0.5
    neg_iou: float = 0.3
    low_quality_matching: bool = True
    proposal_conf: float = 0.02
    proposal_nms: float = 0.6
    proposal_iou: float = 0.6
    pre_nms_top_n: int = 200
    include_gt_proposals: bool = True
    max_keypoint_rois: int = 8
    divergence_factor: float = 10.0
    divergence_patience: int = 100
    loss_smoothing: float = 0.98
    log_every: int = 50
    init_seed: int = 0
    augment_seed: int = 0

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_size not in (1, 2):
            raise ValueError(f"batch_size must be 1 or 2, got {self.batch_size}")
        if not 0 < self.neg_iou <= self.pos_iou < 1:
            raise ValueError(f"need 0 < neg_iou <= pos_iou < 1, got {self.neg_iou}, {self.pos_iou}")
        _check_probability("proposal_conf", self.proposal_conf)
        _check_fraction("proposal_nms", self.proposal_nms)
        _check_fraction("proposal_iou", self.proposal_iou)
        _check_fraction("loss_smoothing", self.loss_smoothing)
        if self.max_keypoint_rois < 0 or self.pre_nms_top_n < 1:
            raise ValueError("max_keypoint_rois must be >= 0 and pre_nms_top_n >= 1")
        if self.divergence_factor <= 1 or self.divergence_patience < 1:
            raise ValueError("divergence_factor must be > 1 and divergence_patience >= 1")
        if self.log_every < 1:
            raise ValueError(f"log_every must be >= 1, got {self.log_every}")


@dataclass
class EvalConfig:
    """Inference and metric settings."""

    ap_iou: float = 0.5
    landmark_iou: float = 0.4
    nme_normalizer: NmeNormalizer = NmeNormalizer.BBOX_SQRT_AREA
    k0: int = 3
    conf_floor: float = 0.02
    nms_thresh: float = 0.6
    pre_nms_top_n: int = 1000
    max_detections: int = 100
    max_landmark_dets: int = 20
    multi_scale: bool = False
    scales: tuple[float, ...] = (0.5, 1.0, 2.0)
    flip: bool = False
    soft_nms_sigma: float = 0.5
    soft_nms_floor: float = 0.001
    vote_iou: float = 0.5

    def __post_init__(self):
        if isinstance(self.nme_normalizer, str):
            self.nme_normalizer = NmeNormalizer.from_string(self.nme_normalizer)
        self.scales = tuple(float(s) for s in self.scales)
        _check_fraction("ap_iou", self.ap_iou)
        _check_fraction("landmark_iou", self.landmark_iou)
        _check_fraction("nms_thresh", self.nms_thresh)
        _check_fraction("vote_iou", self.vote_iou)
        _check_probability("conf_floor", self.conf_floor)
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ValueError(f"scales must be positive, got {self.scales}")
        if self.soft_nms_sigma <= 0:
            raise ValueError(f"soft_nms_sigma must be > 0, got {self.soft_nms_sigma}")
        if self.max_detections < 1 or self.pre_nms_top_n < 1 or self.max_landmark_dets < 0:
            raise ValueError("detection caps must be positive")


def _default_threads() -> int:
    value = os.environ.get("MASKKIT_THREADS", "1")
    try:
        return max(1, int(value))
    except ValueError:
        raise ValueError(f"MASKKIT_THREADS must be an integer, got '{value}'")


@dataclass
class RunConfig:
    """Everything one CLI invocation needs."""

    command: Command = Command.GEN
    out_dir: str = "./maskkit_out"
    data_dir: str | None = None
    model_path: str | None = None
    seed: int = 0
    scenes: int = 512
    holdout_scenes: int = 128
    image_size: int = 160
    faces_per_scene: tuple[int, int] = (1, 3)
    face_size_range: tuple[float, float] = (20.0, 72.0)
    threads: int = field(default_factory=_default_threads)
    compression: Compression = Compression.ZSTD
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if isinstance(self.command, str):
            self.command = Command.from_string(self.command)
        if isinstance(self.compression, str):
            self.compression = Compression.from_string(self.compression)
        self.faces_per_scene = tuple(int(v) for v in self.faces_per_scene)
        self.face_size_range = tuple(float(v) for v in self.face_size_range)
        _check_range("faces_per_scene", *self.faces_per_scene)
        _check_range("face_size_range", *self.face_size_range)
        if self.faces_per_scene[0] < 0 or self.face_size_range[0] <= 0:
            raise ValueError("faces_per_scene must be >= 0 and face sizes positive")
        if self.scenes < 0 or self.holdout_scenes < 0:
            raise ValueError("scene counts must be >= 0")
        if self.image_size < 16:
            raise ValueError(f"image_size must be >= 16, got {self.image_size}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")

    @property
    def scene_root(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out_dir) / "scenes"

    @property
    def train_dir(self) -> Path:
        return self.scene_root / "train"

    @property
    def holdout_dir(self) -> Path:
        return self.scene_root / "holdout"

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.model_path) if self.model_path else Path(self.out_dir) / "model.mkfc"
