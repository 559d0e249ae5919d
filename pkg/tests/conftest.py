"""Shared pytest fixtures."""

import tempfile
from pathlib import Path

import numpy as np
import pytest

from maskkit.models import RunConfig, ScheduleConfig, ToyModelConfig, TrainConfig


@pytest.fixture
def temp_data_dir():
    """Create a temporary directory for test data."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def rng():
    """Seeded generator so randomized checks are repeatable."""
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config(temp_data_dir):
    """A desk-scale run: 64 x 64 scenes, a handful of steps."""
    return RunConfig(
        out_dir=str(temp_data_dir / "run"),
        scenes=4,
        holdout_scenes=2,
        image_size=64,
        faces_per_scene=(1, 1),
        face_size_range=(24.0, 36.0),
        model=ToyModelConfig(input_size=64),
        schedule=ScheduleConfig(warmup_steps=2, patience=10),
        train=TrainConfig(steps=3, log_every=1, max_keypoint_rois=2),
    )
