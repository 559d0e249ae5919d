"""
Configuration loading and validation.
"""

import json
from dataclasses import asdict, fields
from pathlib import Path

import yaml

from .models import (
    AnchorConfig,
    AugmentConfig,
    EvalConfig,
    LossConfig,
    RunConfig,
    ScheduleConfig,
    ToyModelConfig,
    TrainConfig,
)


class ConfigurationError(Exception):
    """Raised when configuration is invalid or missing."""


_SECTIONS = {
    "anchors": AnchorConfig,
    "loss": LossConfig,
    "augment": AugmentConfig,
    "model": ToyModelConfig,
    "schedule": ScheduleConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
}
_TOP_LEVEL = {f.name for f in fields(RunConfig)} - set(_SECTIONS) - {"command"}


def load_config(config_path: str = "maskkit.yaml") -> RunConfig:
    """
    Load a run configuration from a YAML file.

    Args:
        config_path: Path to the configuration file

    Returns:
        RunConfig instance

    Raises:
        ConfigurationError: If the config file is missing or invalid
    """
    config_file = Path(config_path)

    if not config_file.exists():
        raise ConfigurationError(
            f"Configuration file not found: {config_path}\n"
            "Run 'maskkit --write-template maskkit.yaml' for a commented example."
        )

    try:
        with open(config_file, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"Invalid YAML in {config_path}: {e}") from e

    return _parse_config(data or {})


def _build(cls, name: str, values):
    if not isinstance(values, dict):
        raise ConfigurationError(f"Section '{name}' must be a mapping, got {type(values).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"Unknown keys in '{name}': {unknown}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid '{name}' configuration: {e}") from e


def _parse_config(data: dict) -> RunConfig:
    """Parse a configuration dictionary into RunConfig."""
    if not isinstance(data, dict):
        raise ConfigurationError("Configuration root must be a mapping")
    unknown = sorted(set(data) - _TOP_LEVEL - set(_SECTIONS))
    if unknown:
        raise ConfigurationError(f"Unknown configuration keys: {unknown}")

    sections = {name: _build(cls, name, data[name]) for name, cls in _SECTIONS.items() if name in data}
    top = {k: v for k, v in data.items() if k in _TOP_LEVEL}
    try:
        return RunConfig(**top, **sections)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"Invalid configuration: {e}") from e


def load_anchor_config(path: str | Path) -> AnchorConfig:
    """Read anchor settings from JSON (keys: base_areas, scales, strides, aspect_ratios)."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"Anchor configuration not found: {path}")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Invalid JSON in {path}: {e}") from e
    return _build(AnchorConfig, "anchors", data)


def save_anchor_config(cfg: AnchorConfig, path: str | Path) -> None:
    Path(path).write_text(json.dumps(asdict(cfg), indent=2), encoding="utf-8")


def create_template_config(output_path: str = "maskkit.yaml.template") -> None:
    """Create a template configuration file."""
    template = """# maskkit run configuration
# =========================
# Every key is optional; command-line flags override values set here.

out_dir: "./maskkit_out"     # Artifacts: scenes/, model.mkfc, traces, eval files
seed: 0                      # Scene corpus seed
scenes: 512                  # Training scenes
holdout_scenes: 128          # Held-out evaluation scenes
image_size: 160              # Square scene side in pixels
faces_per_scene: [1, 3]      # Inclusive range
face_size_range: [20, 72]    # Face box width range in pixels
threads: 1                   # Generation workers (env MASKKIT_THREADS)

# Parquet compression for the corpus index
# "zstd" (recommended), "snappy", "gzip", "lz4" or "none"
compression: "zstd"

anchors:
  base_areas: [256, 1024, 4096, 16384, 65536]
  scales: [1.0, 1.2599210498948732, 1.5874010519681994]
  strides: [4, 8, 16, 32, 64]

loss:
  alpha: 0.25
  gamma: 2.0
  lambda_kp: 0.25            # Weight of the keypoint loss

augment:
  mode: "detection"          # "detection" or "landmark"
  scale_range: [0.5, 2.5]
  bbox_crop_prob: 0.5
  hflip_prob: 0.5
  gain_range: [0.8, 1.2]
  bias_range: [-0.1, 0.1]
  rotation_range: 30         # Landmark mode only, degrees

model:
  fpn_channels: 16
  context_widths: [8, 4, 4]
  use_context: true          # false = heads read the FPN outputs directly
  keypoint_convs: 2
  keypoint_channels: 8
  input_size: 160

schedule:
  warmup_start: 0.0001
  peak_lr: 0.002
  warmup_steps: 200
  decay_factor: 0.1
  min_lr: 0.0001
  patience: 300              # Steps without improvement before decaying

train:
  steps: 2000
  batch_size: 1              # 1 or 2
  k0: 3                      # Pyramid level of a 224 x 224 RoI
  low_quality_matching: true
  include_gt_proposals: true
  max_keypoint_rois: 8
  init_seed: 0
  augment_seed: 0

eval:
  ap_iou: 0.5
  landmark_iou: 0.4
  nme_normalizer: "bbox_sqrt_area"   # or "inter_ocular"
  multi_scale: false         # Image pyramid over `scales`
  scales: [0.5, 1.0, 2.0]
  flip: false                # Horizontal-flip fusion
"""
    with open(output_path, "w", encoding="utf-8") as f:
        f.write(template)
