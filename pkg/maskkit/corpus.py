"""
Parallel generation of train/holdout scene corpora.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from threading import Lock

import numpy as np

from .models import RunConfig
from .storage import SceneStore
from .synthdata import generate_scene

logger = logging.getLogger(__name__)

SPLITS = {"train": 0, "holdout": 1}


@dataclass
class CorpusStats:
    """Statistics for a generation run."""

    scenes_written: int = 0
    faces: int = 0
    dropped: int = 0
    errors: int = 0
    failed_scenes: list[int] = field(default_factory=list)
    start_time: datetime | None = None
    end_time: datetime | None = None

    @property
    def elapsed(self) -> timedelta:
        if not self.start_time:
            return timedelta(0)
        return (self.end_time or datetime.now()) - self.start_time


def scene_seed(run_seed: int, split: str, index: int, faces_per_scene: tuple[int, int]) -> tuple[int, int]:
    """(scene seed, face count) for one scene; depends only on its position, never on threads."""
    rng = np.random.default_rng(np.random.SeedSequence([run_seed, SPLITS[split], index]))
    n_faces = int(rng.integers(faces_per_scene[0], faces_per_scene[1] + 1))
    return int(rng.integers(0, 2**31 - 1)), n_faces


class CorpusGenerator:
    """Renders scenes with a worker pool and writes them plus an index to a SceneStore."""

    def __init__(self, config: RunConfig):
        self.config = config
        self._stats = CorpusStats()
        self._stats_lock = Lock()

    @property
    def stats(self) -> CorpusStats:
        return self._stats

    def generate(self, split: str, count: int) -> CorpusStats:
        store = SceneStore(self.config.scene_root / split, self.config.compression)
        self._stats = CorpusStats(start_time=datetime.now())
        self._log_start(split, count, store)

        rows: list[dict] = []

        def render_one(index: int) -> int:
            seed, n_faces = scene_seed(self.config.seed, split, index, self.config.faces_per_scene)
            size = self.config.image_size
            try:
                scene = generate_scene(seed, size, size, n_faces, self.config.face_size_range)
                store.save(index, scene)
            except Exception as e:
                logger.error("Error rendering scene %d: %s", index, e)
                with self._stats_lock:
                    self._stats.errors += 1
                    self._stats.failed_scenes.append(index)
                return index
            with self._stats_lock:
                self._stats.scenes_written += 1
                self._stats.faces += len(scene.faces)
                self._stats.dropped += scene.dropped
                rows.append({
                    "scene_id": index,
                    "seed": seed,
                    "width": size,
                    "height": size,
                    "n_faces": len(scene.faces),
                    "n_dropped": scene.dropped,
                })
            return index

        workers = self.config.threads
        if workers <= 1:
            for index in range(count):
                render_one(index)
        else:
            logger.info("Using %d parallel workers", workers)
            with ThreadPoolExecutor(max_workers=workers) as executor:
                futures = [executor.submit(render_one, i) for i in range(count)]
                for done, future in enumerate(as_completed(futures), 1):
                    future.result()
                    if done % 100 == 0 or done == count:
                        logger.info("[%d/%d] scenes rendered", done, count)

        store.write_index(rows)
        self._stats.end_time = datetime.now()
        self._log_summary(split, store)
        return self._stats

    def _log_start(self, split: str, count: int, store: SceneStore) -> None:
        logger.info("")
        logger.info("#" * 60)
        logger.info("Generating %s corpus: %d scenes", split, count)
        logger.info("Data directory: %s", store.data_dir.absolute())
        logger.info("Image size: %d | Faces per scene: %s", self.config.image_size, self.config.faces_per_scene)
        logger.info("Compression: %s", self.config.compression.value)
        logger.info("Parallel workers: %d", self.config.threads)
        logger.info("#" * 60)

    def _log_summary(self, split: str, store: SceneStore) -> None:
        s = self._stats
        logger.info("")
        logger.info("=" * 60)
        logger.info("%s CORPUS COMPLETE", split.upper())
        logger.info("Scenes: %d | Faces: %d | Unplaced: %d | Errors: %d",
                    s.scenes_written, s.faces, s.dropped, s.errors)
        logger.info("Time: %s", s.elapsed)
        logger.info("Size on disk: %.1f MB", store.get_file_size() / 1e6)
        if s.failed_scenes:
            logger.info("Failed: %s", ", ".join(str(i) for i in sorted(s.failed_scenes)))
        logger.info("=" * 60)


def generate_corpus(config: RunConfig) -> dict[str, CorpusStats]:
    """Render the train and holdout splits under ``config.scene_root``."""
    generator = CorpusGenerator(config)
    return {
        "train": generator.generate("train", config.scenes),
        "holdout": generator.generate("holdout", config.holdout_scenes),
    }
