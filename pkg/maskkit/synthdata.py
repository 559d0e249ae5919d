"""
Procedural face scenes with exact ground truth, and the two training augmentation pipelines.

A face is a filled ellipse with five dark landmark blobs at fixed fractional offsets of its
box. Image geometry goes through OpenCV; annotations are transformed with the same
matrices in continuous coordinates (pixel ``i`` spans ``[i, i + 1)``).
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace

import cv2
import numpy as np

from .geometry import Box
from .models import AnchorConfig, AugmentConfig, AugmentMode

logger = logging.getLogger(__name__)

# left eye, right eye, nose, left mouth corner, right mouth corner
LANDMARK_TEMPLATE = np.array(
    [(0.3, 0.35), (0.7, 0.35), (0.5, 0.55), (0.35, 0.75), (0.65, 0.75)],
    dtype=np.float64,
)
FLIP_PERMUTATION = (1, 0, 2, 4, 3)
NUM_KEYPOINTS = len(LANDMARK_TEMPLATE)
MAX_PLACEMENT_ATTEMPTS = 50


@dataclass(frozen=True)
class Face:
    box: Box
    landmarks: np.ndarray  # (K, 2)
    visible: np.ndarray    # (K,) bool


@dataclass(frozen=True)
class Scene:
    """An H x W x 3 image in [0, 1] with its face annotations."""

    image: np.ndarray
    faces: tuple[Face, ...] = field(default_factory=tuple)
    seed: int = 0
    dropped: int = 0

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    @property
    def boxes(self) -> list[Box]:
        return [f.box for f in self.faces]


def template_landmarks(box: Box) -> np.ndarray:
    """Landmark positions of the face template rendered inside ``box``."""
    return np.stack(
        [box.x1 + LANDMARK_TEMPLATE[:, 0] * box.width, box.y1 + LANDMARK_TEMPLATE[:, 1] * box.height],
        axis=1,
    )


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap intensities to multiples of 1/255 so 8-bit storage is lossless."""
    return np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0


def _background(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    coarse = rng.random((max(2, h // 16), max(2, w // 16), 3))
    smooth = cv2.resize(coarse, (w, h), interpolation=cv2.INTER_LINEAR)
    return 0.15 + 0.5 * smooth + rng.normal(0.0, 0.03, size=(h, w, 3))


def _render_face(image: np.ndarray, box: Box, rng: np.random.Generator) -> None:
    h, w = image.shape[:2]
    yy, xx = np.mgrid[0:h, 0:w] + 0.5
    cx, cy = box.center
    inside = ((xx - cx) / (box.width / 2)) ** 2 + ((yy - cy) / (box.height / 2)) ** 2 <= 1.0
    tone = rng.uniform(0.6, 0.95) * np.array([1.0, 0.82, 0.68])
    image[inside] = tone
    radius = max(1.2, 0.07 * min(box.width, box.height))
    for px, py in template_landmarks(box):
        blob = (xx - px) ** 2 + (yy - py) ** 2 <= radius**2
        image[blob] = (0.08, 0.05, 0.05)


def generate_scene(
    seed: int,
    w: int,
    h: int,
    n_faces: int,
    size_range: tuple[float, float],
) -> Scene:
    """Render ``n_faces`` non-overlapping faces on seeded noise; same seed, same bytes."""
    rng = np.random.default_rng(seed)
    image = _background(rng, w, h)
    faces: list[Face] = []
    dropped = 0
    for _ in range(n_faces):
        box = None
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            bw = rng.uniform(*size_range)
            bh = bw * rng.uniform(1.0, 1.25)
            if bw >= w or bh >= h:
                continue
            candidate = Box.from_center(rng.uniform(bw / 2, w - bw / 2), rng.uniform(bh / 2, h - bh / 2), bw, bh)
            if all(not _overlaps(candidate, f.box) for f in faces):
                box = candidate
                break
        if box is None:
            dropped += 1
            continue
        _render_face(image, box, rng)
        faces.append(Face(box, template_landmarks(box), np.ones(NUM_KEYPOINTS, dtype=bool)))
    if dropped:
        logger.warning("Scene %d: could not place %d of %d faces", seed, dropped, n_faces)
    return Scene(image=quantize(image), faces=tuple(faces), seed=seed, dropped=dropped)


def _overlaps(a: Box, b: Box) -> bool:
    return min(a.x2, b.x2) > max(a.x1, b.x1) and min(a.y2, b.y2) > max(a.y1, b.y1)


def annotation_area_bounds(cfg: AnchorConfig | None = None) -> tuple[float, float]:
    """[0.4 * smallest anchor area, 2.5 * largest anchor area]."""
    cfg = cfg or AnchorConfig()
    return 0.4 * cfg.smallest_side**2, 2.5 * cfg.largest_side**2


def filter_annotations(
    faces: Sequence[Face],
    area_small: float | None = None,
    area_large: float | None = None,
) -> tuple[Face, ...]:
    """Keep faces whose box area lies in [0.4 * area_small, 2.5 * area_large]."""
    cfg = AnchorConfig()
    area_small = cfg.smallest_side**2 if area_small is None else area_small
    area_large = cfg.largest_side**2 if area_large is None else area_large
    lo, hi = 0.4 * area_small, 2.5 * area_large
    return tuple(f for f in faces if lo <= f.box.area <= hi)


def rescale(scene: Scene, scale: float) -> Scene:
    """Resize the image by ``scale`` (rounded to whole pixels) and the annotations alike."""
    new_w = max(1, round(scene.width * scale))
    new_h = max(1, round(scene.height * scale))
    if (new_w, new_h) == (scene.width, scene.height):
        return scene
    fx, fy = new_w / scene.width, new_h / scene.height
    image = cv2.resize(scene.image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    faces = tuple(
        Face(
            Box(f.box.x1 * fx, f.box.y1 * fy, f.box.x2 * fx, f.box.y2 * fy),
            f.landmarks * np.array([fx, fy]),
            f.visible,
        )
        for f in scene.faces
    )
    return replace(scene, image=image, faces=faces)


def crop(scene: Scene, x0: int, y0: int, width: int, height: int) -> Scene:
    """
    Cut a window at (x0, y0), zero-padding beyond the image. Faces whose box centre
    leaves the window are dropped; kept boxes are clipped and landmarks outside the
    window become invisible.
    """
    canvas = np.zeros((height, width, 3), dtype=np.float64)
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + width, scene.width), min(y0 + height, scene.height)
    if sx1 > sx0 and sy1 > sy0:
        canvas[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0] = scene.image[sy0:sy1, sx0:sx1]
    faces = []
    for f in scene.faces:
        cx, cy = f.box.center
        if not (x0 <= cx < x0 + width and y0 <= cy < y0 + height):
            continue
        box = Box(
            max(f.box.x1 - x0, 0.0),
            max(f.box.y1 - y0, 0.0),
            min(f.box.x2 - x0, float(width)),
            min(f.box.y2 - y0, float(height)),
        )
        pts = f.landmarks - np.array([x0, y0])
        inside = (pts[:, 0] >= 0) & (pts[:, 0] <= width) & (pts[:, 1] >= 0) & (pts[:, 1] <= height)
        faces.append(Face(box, pts, f.visible & inside))
    return replace(scene, image=canvas, faces=tuple(faces))


def hflip(scene: Scene) -> Scene:
    """Mirror horizontally; left/right landmark identities swap."""
    w = scene.width
    perm = list(FLIP_PERMUTATION)
    faces = []
    for f in scene.faces:
        pts = f.landmarks[perm].copy()
        pts[:, 0] = w - pts[:, 0]
        faces.append(Face(Box(w - f.box.x2, f.box.y1, w - f.box.x1, f.box.y2), pts, f.visible[perm]))
    return replace(scene, image=np.ascontiguousarray(scene.image[:, ::-1]), faces=tuple(faces))


def rotation_matrix(theta_deg: float, center: tuple[float, float]) -> np.ndarray:
    """2 x 3 affine rotating by ``theta_deg`` about ``center`` (continuous coordinates)."""
    return cv2.getRotationMatrix2D(center, theta_deg, 1.0)


def rotate(scene: Scene, theta_deg: float) -> Scene:
    """
    Rotate about the image centre. Landmarks follow the same affine map; boxes become
    the axis-aligned hull of their rotated corners, clipped to the image.
    """
    w, h = scene.width, scene.height
    m = rotation_matrix(theta_deg, (w / 2, h / 2))
    # OpenCV samples at integer pixel indices, i.e. continuous coordinate minus 0.5
    m_idx = rotation_matrix(theta_deg, (w / 2 - 0.5, h / 2 - 0.5))
    image = cv2.warpAffine(
        scene.image, m_idx, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=(0.0, 0.0, 0.0),
    )
    faces = []
    for f in scene.faces:
        b = f.box
        corners = np.array([(b.x1, b.y1), (b.x2, b.y1), (b.x2, b.y2), (b.x1, b.y2)])
        rc = transform_points(corners, m)
        cx, cy = transform_points(np.array([b.center]), m)[0]
        if not (0 <= cx < w and 0 <= cy < h):
            continue
        box = Box(max(rc[:, 0].min(), 0.0), max(rc[:, 1].min(), 0.0), min(rc[:, 0].max(), w), min(rc[:, 1].max(), h))
        pts = transform_points(f.landmarks, m)
        inside = (pts[:, 0] >= 0) & (pts[:, 0] <= w) & (pts[:, 1] >= 0) & (pts[:, 1] <= h)
        faces.append(Face(box, pts, f.visible & inside))
    return replace(scene, image=image, faces=tuple(faces))


def transform_points(points: np.ndarray, affine: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    return pts @ affine[:, :2].T + affine[:, 2]


def color_distort(scene: Scene, gains: np.ndarray, biases: np.ndarray) -> Scene:
    """Per-channel affine intensity jitter, clipped to [0, 1]."""
    image = np.clip(scene.image * gains[None, None, :] + biases[None, None, :], 0.0, 1.0)
    return replace(scene, image=image)


def _crop_origin(lo: float, hi: float, extent: int, size: int, rng: np.random.Generator) -> int:
    """Window start containing [lo, hi] when possible, clamped to the image (or padding)."""
    a, b = hi - size, lo
    start = (lo + hi) / 2 - size / 2 if a > b else rng.uniform(a, b)
    low, high = min(0, extent - size), max(0, extent - size)
    return int(math.floor(min(max(start, low), high)))


def _random_origin(extent: int, size: int, rng: np.random.Generator) -> int:
    low, high = min(0, extent - size), max(0, extent - size)
    return int(math.floor(rng.uniform(low, high))) if high > low else low


def _flip_and_color(scene: Scene, cfg: AugmentConfig, rng: np.random.Generator) -> Scene:
    if rng.random() < cfg.hflip_prob:
        scene = hflip(scene)
    gains = rng.uniform(*cfg.gain_range, size=3)
    biases = rng.uniform(*cfg.bias_range, size=3)
    if np.any(gains != 1.0) or np.any(biases != 0.0):
        scene = color_distort(scene, gains, biases)
    return scene


def augment_detection(
    scene: Scene,
    cfg: AugmentConfig,
    seed: int,
    anchors: AnchorConfig | None = None,
) -> Scene:
    """Scale jitter, annotation filter, (box-centred) crop, flip and color distortion."""
    rng = np.random.default_rng(seed)
    size = cfg.detection_crop
    out = rescale(scene, rng.uniform(*cfg.scale_range))
    lo, hi = annotation_area_bounds(anchors)
    out = replace(out, faces=filter_annotations(out.faces, lo / 0.4, hi / 2.5))
    if out.faces and rng.random() < cfg.bbox_crop_prob:
        face = out.faces[rng.integers(len(out.faces))]
        x0 = _crop_origin(face.box.x1, face.box.x2, out.width, size, rng)
        y0 = _crop_origin(face.box.y1, face.box.y2, out.height, size, rng)
    else:
        x0 = _random_origin(out.width, size, rng)
        y0 = _random_origin(out.height, size, rng)
    out = crop(out, x0, y0, size, size)
    return _flip_and_color(out, cfg, rng)


def augment_landmark(scene: Scene, cfg: AugmentConfig, seed: int) -> Scene:
    """Resize so a chosen face has the target size, crop around it, rotate, flip, color."""
    if not scene.faces:
        raise ValueError("landmark augmentation needs a scene with at least one face")
    rng = np.random.default_rng(seed)
    size = cfg.landmark_crop
    face_index = int(rng.integers(len(scene.faces)))
    face = scene.faces[face_index]
    target = rng.uniform(*cfg.box_size_range)
    out = rescale(scene, target / math.sqrt(face.box.area))
    face = out.faces[face_index]
    x0 = _crop_origin(face.box.x1, face.box.x2, out.width, size, rng)
    y0 = _crop_origin(face.box.y1, face.box.y2, out.height, size, rng)
    out = crop(out, x0, y0, size, size)
    theta = rng.uniform(-cfg.rotation_range, cfg.rotation_range)
    if theta != 0.0:
        out = rotate(out, theta)
    return _flip_and_color(out, cfg, rng)


def augment(scene: Scene, cfg: AugmentConfig, seed: int, anchors: AnchorConfig | None = None) -> Scene:
    """Dispatch on ``cfg.mode``; faceless scenes always take the detection pipeline."""
    if cfg.mode is AugmentMode.LANDMARK and scene.faces:
        return augment_landmark(scene, cfg, seed)
    return augment_detection(scene, cfg, seed, anchors)
