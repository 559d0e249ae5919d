"""
Persistence for scenes, corpus indexes, detections, curves, loss traces and checkpoints.
"""

import json
import logging
import struct
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path

import cv2
import numpy as np
import pandas as pd
import yaml

from .geometry import Box
from .models import Compression
from .suppression import Detection
from .synthdata import Face, Scene

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"MKFC"
CHECKPOINT_VERSION = 1
INDEX_FILE = "index.parquet"
INDEX_COLUMNS = ["scene_id", "seed", "width", "height", "n_faces", "n_dropped"]
TRACE_COLUMNS = ["step", "lr", "l_cls", "l_box", "l_kp", "l_total", "n_pos", "n_rois"]


class StorageError(Exception):
    """Raised when an artifact cannot be written or read back."""


def scene_name(index: int) -> str:
    return f"scene_{index:05d}"


def _to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def _face_record(face: Face) -> dict:
    return {
        "box": [face.box.x1, face.box.y1, face.box.x2, face.box.y2],
        "landmarks": [[float(x), float(y), bool(v)] for (x, y), v in zip(face.landmarks, face.visible)],
    }


def _face_from_record(record: dict) -> Face:
    pts = np.array([p[:2] for p in record["landmarks"]], dtype=np.float64).reshape(-1, 2)
    visible = np.array([bool(p[2]) for p in record["landmarks"]], dtype=bool)
    return Face(Box(*record["box"]), pts, visible)


def save_scene(scene: Scene, image_path: Path) -> Path:
    """Write ``<name>.ppm`` (binary P6) plus the ``<name>.json`` annotation sidecar."""
    image_path = Path(image_path)
    image_path.parent.mkdir(parents=True, exist_ok=True)
    bgr = np.ascontiguousarray(_to_uint8(scene.image)[:, :, ::-1])
    if not cv2.imwrite(str(image_path), bgr):
        raise StorageError(f"Failed to write image {image_path}")
    sidecar = image_path.with_suffix(".json")
    payload = {"seed": scene.seed, "dropped": scene.dropped, "faces": [_face_record(f) for f in scene.faces]}
    sidecar.write_text(json.dumps(payload, indent=1))
    return sidecar


def load_scene(image_path: Path) -> Scene:
    """Read a scene written by ``save_scene``."""
    image_path = Path(image_path)
    sidecar = image_path.with_suffix(".json")
    if not image_path.exists() or not sidecar.exists():
        raise StorageError(f"Scene files not found: {image_path} / {sidecar}")
    bgr = cv2.imread(str(image_path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise StorageError(f"Failed to decode image {image_path}")
    try:
        payload = json.loads(sidecar.read_text())
        faces = tuple(_face_from_record(r) for r in payload["faces"])
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise StorageError(f"Invalid annotation file {sidecar}: {e}")
    image = bgr[:, :, ::-1].astype(np.float64) / 255.0
    return Scene(image=image, faces=faces, seed=int(payload.get("seed", 0)), dropped=int(payload.get("dropped", 0)))


class SceneStore:
    """A corpus directory: scene files plus a parquet index."""

    def __init__(self, data_dir: Path, compression: Compression = Compression.ZSTD):
        self.data_dir = Path(data_dir)
        # Convert "none" to None for pandas (no compression)
        self.compression = None if compression is Compression.NONE else compression.value

    def image_path(self, index: int) -> Path:
        return self.data_dir / f"{scene_name(index)}.ppm"

    def save(self, index: int, scene: Scene) -> None:
        save_scene(scene, self.image_path(index))

    def load(self, index: int) -> Scene:
        return load_scene(self.image_path(index))

    def write_index(self, rows: Iterable[dict]) -> Path:
        df = pd.DataFrame(list(rows), columns=INDEX_COLUMNS).sort_values("scene_id").reset_index(drop=True)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        path = self.data_dir / INDEX_FILE
        df.to_parquet(path, index=False, compression=self.compression)
        return path

    def read_index(self) -> pd.DataFrame:
        path = self.data_dir / INDEX_FILE
        if not path.exists():
            raise StorageError(f"No corpus index at {path}; run 'gen' first")
        try:
            return pd.read_parquet(path)
        except Exception as e:
            raise StorageError(f"Failed to read corpus index {path}: {e}")

    def __len__(self) -> int:
        return len(self.read_index())

    def load_all(self) -> list[Scene]:
        return [self.load(int(i)) for i in self.read_index()["scene_id"]]

    def get_file_size(self) -> int:
        if not self.data_dir.exists():
            return 0
        return sum(f.stat().st_size for f in self.data_dir.iterdir() if f.is_file())


def write_detections(path: Path, detections: Mapping[str, Sequence[Detection]]) -> None:
    """One JSON record per detection, images in sorted id order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for image_id in sorted(detections):
            for det in detections[image_id]:
                f.write(json.dumps(det.to_record(image_id)) + "\n")


def read_detections(path: Path) -> dict[str, list[Detection]]:
    result: dict[str, list[Detection]] = {}
    try:
        with open(path) as f:
            for line in f:
                if not line.strip():
                    continue
                r = json.loads(line)
                landmarks = np.array(r["landmarks"]).reshape(-1, 2) if "landmarks" in r else None
                det = Detection(Box(r["x1"], r["y1"], r["x2"], r["y2"]), r["score"], landmarks)
                result.setdefault(r["image_id"], []).append(det)
    except (OSError, json.JSONDecodeError, KeyError) as e:
        raise StorageError(f"Failed to read detections {path}: {e}")
    return result


def write_curve(path: Path, x: np.ndarray, y: np.ndarray, columns: tuple[str, str]) -> None:
    """Two-column CSV with header."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame({columns[0]: np.asarray(x), columns[1]: np.asarray(y)}).to_csv(path, index=False)


def write_trace(path: Path, rows: Sequence[dict]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows), columns=TRACE_COLUMNS).to_csv(path, index=False)


def read_trace(path: Path) -> pd.DataFrame:
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError) as e:
        raise StorageError(f"Failed to read loss trace {path}: {e}")


def write_summary(path: Path, summary: Mapping) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        yaml.safe_dump(dict(summary), f, sort_keys=True, default_flow_style=False)


def save_checkpoint(path: Path, config: Mapping, tensors: Mapping[str, np.ndarray]) -> None:
    """
    Binary checkpoint: magic, format version, JSON model config, then named tensors
    (name, rank, int64 shape, little-endian float64 data) in insertion order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = json.dumps(dict(config), sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            arr = np.asarray(value, dtype="<f8")
            encoded = name.encode()
            f.write(struct.pack("<II", len(encoded), arr.ndim))
            f.write(encoded)
            f.write(np.asarray(arr.shape, dtype="<i8").tobytes())
            f.write(arr.tobytes(order="C"))
    logger.debug("Saved %d tensors to %s", len(tensors), path)


def load_checkpoint(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    """Inverse of ``save_checkpoint``; returns (config, tensors)."""
    path = Path(path)
    if not path.exists():
        raise StorageError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise StorageError(f"{path} is not a maskkit checkpoint")
    try:
        version, n = struct.unpack_from("<II", data, 4)
        if version != CHECKPOINT_VERSION:
            raise StorageError(f"Unsupported checkpoint version {version}")
        offset = 12
        config = json.loads(data[offset : offset + n])
        offset += n
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        tensors = {}
        for _ in range(count):
            name_len, rank = struct.unpack_from("<II", data, offset)
            offset += 8
            name = data[offset : offset + name_len].decode()
            offset += name_len
            shape = tuple(int(s) for s in np.frombuffer(data, dtype="<i8", count=rank, offset=offset))
            offset += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            tensors[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
            offset += 8 * size
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        raise StorageError(f"Corrupt checkpoint {path}: {e}")
    return config, tensors


def write_table(path: Path, rows: Sequence[dict]) -> None:
    """CSV of arbitrary records (benchmarks, gradient-check tables)."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(rows)).to_csv(path, index=False)
