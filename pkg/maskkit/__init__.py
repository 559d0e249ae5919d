"""
maskkit
=======

Single-stage face detection with keypoint-mask landmarks, trained and evaluated
end to end on seeded synthetic scenes. Everything runs on NumPy; OpenCV handles
image resampling and scene files.

Quick Start:
    from maskkit import RunConfig, generate_corpus, train_toy, evaluate_corpus, SceneStore

    config = RunConfig(out_dir="./run", scenes=64, holdout_scenes=16)
    generate_corpus(config)
    model, stats = train_toy(SceneStore(config.train_dir).load_all(), config)
    report = evaluate_corpus(model, SceneStore(config.holdout_dir).load_all(), config)
    print(report.summary())
"""

from .config import (
    ConfigurationError,
    create_template_config,
    load_anchor_config,
    load_config,
    save_anchor_config,
)
from .corpus import CorpusGenerator, CorpusStats, generate_corpus
from .evaluation import EvalReport, evaluate_corpus, write_report
from .geometry import AnchorGrid, Box, assign_level, decode_deltas, encode_deltas, generate_anchors, iou
from .inference import predict, predict_tta
from .matching import MatchLabel, MatchResult, match_anchors
from .metrics import MetricsError, ced_curve, nme, pr_curve_ap
from .models import (
    AnchorConfig,
    AugmentConfig,
    AugmentMode,
    Command,
    Compression,
    EvalConfig,
    LossConfig,
    NmeNormalizer,
    RunConfig,
    ScheduleConfig,
    ToyModelConfig,
    TrainConfig,
)
from .network import ToyMaskFace, build_toy_maskface
from .pilot import PilotReport, RegressionBounds, run_pilot
from .storage import SceneStore, StorageError, load_checkpoint, read_detections, save_checkpoint
from .suppression import Detection, box_vote, nms_greedy, soft_nms
from .synthdata import Face, Scene, augment, generate_scene
from .trainer import ToyTrainer, TrainingDivergedError, TrainStats, train_toy

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "AnchorGrid",
    "AugmentConfig",
    "AugmentMode",
    "Box",
    "Command",
    "Compression",
    "ConfigurationError",
    "CorpusGenerator",
    "CorpusStats",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "Face",
    "LossConfig",
    "MatchLabel",
    "MatchResult",
    "MetricsError",
    "NmeNormalizer",
    "PilotReport",
    "RegressionBounds",
    "RunConfig",
    "Scene",
    "SceneStore",
    "ScheduleConfig",
    "StorageError",
    "ToyMaskFace",
    "ToyModelConfig",
    "ToyTrainer",
    "TrainConfig",
    "TrainStats",
    "TrainingDivergedError",
    "assign_level",
    "augment",
    "box_vote",
    "build_toy_maskface",
    "ced_curve",
    "create_template_config",
    "decode_deltas",
    "encode_deltas",
    "evaluate_corpus",
    "generate_anchors",
    "generate_corpus",
    "generate_scene",
    "iou",
    "load_anchor_config",
    "load_checkpoint",
    "load_config",
    "match_anchors",
    "nme",
    "nms_greedy",
    "predict",
    "predict_tta",
    "pr_curve_ap",
    "read_detections",
    "run_pilot",
    "save_anchor_config",
    "save_checkpoint",
    "soft_nms",
    "train_toy",
    "write_report",
]
