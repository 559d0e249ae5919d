"""
Boxes, IoU, box-delta parameterization, anchors and pyramid-level assignment.

Boxes use continuous ``(x1, y1, x2, y2)`` pixel coordinates without the ``+1``
pixel-count convention. Array variants take ``(N, 4)`` float64 arrays in the same order.
"""

import math
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .models import AnchorConfig

# |dw|, |dh| are clamped here before exponentiation
DELTA_CLAMP = math.log(1000.0 / 16.0)

MIN_LEVEL = 2
MAX_LEVEL = 6
CANONICAL_SIZE = 224.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle with positive width and height."""

    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"Box coordinates must be finite, got {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"Degenerate box {coords}: need x2 > x1 and y2 > y1")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "Box":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    def contains_point(self, x: float, y: float) -> bool:
        return self.x1 <= x <= self.x2 and self.y1 <= y <= self.y2


class BoxDelta(NamedTuple):
    """Parameterized offsets of a box relative to an anchor (dw, dh in log space)."""

    dx: float
    dy: float
    dw: float
    dh: float


class Decoded(NamedTuple):
    box: Box
    clamped: bool


@dataclass(frozen=True)
class AnchorGrid:
    """Dense anchors over all pyramid levels, row-major per level, scales fastest."""

    boxes: np.ndarray   # (N, 4)
    levels: np.ndarray  # (N,) pyramid level 2..6
    cells: np.ndarray   # (N, 2) (row, col) within the level
    level_shapes: tuple[tuple[int, int], ...]
    strides: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.boxes)

    def box(self, index: int) -> Box:
        return Box(*self.boxes[index])

    def level_slice(self, level: int) -> slice:
        """Index range of the anchors of one pyramid level."""
        start = int(np.searchsorted(self.levels, level, side="left"))
        stop = int(np.searchsorted(self.levels, level, side="right"))
        return slice(start, stop)


def as_box_array(boxes: Sequence[Box] | np.ndarray) -> np.ndarray:
    """Convert a list of Box (or an array) into an (N, 4) float64 array."""
    if isinstance(boxes, np.ndarray):
        return boxes.reshape(-1, 4).astype(np.float64, copy=False)
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.stack([b.as_array() for b in boxes])


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between (N, 4) and (M, 4) arrays, shape (N, M)."""
    a = as_box_array(a)
    b = as_box_array(b)
    ix1 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy1 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix2 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy2 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix2 - ix1, 0, None) * np.clip(iy2 - iy1, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(inter > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def encode_deltas(anchor: Box, gt: Box) -> BoxDelta:
    """Center offsets scaled by anchor size, log size ratios."""
    acx, acy = anchor.center
    gcx, gcy = gt.center
    return BoxDelta(
        (gcx - acx) / anchor.width,
        (gcy - acy) / anchor.height,
        math.log(gt.width / anchor.width),
        math.log(gt.height / anchor.height),
    )


def decode_deltas(anchor: Box, d: BoxDelta) -> Decoded:
    """Inverse of encode_deltas; log-size terms beyond DELTA_CLAMP are clamped and flagged."""
    dw = min(max(d.dw, -DELTA_CLAMP), DELTA_CLAMP)
    dh = min(max(d.dh, -DELTA_CLAMP), DELTA_CLAMP)
    clamped = dw != d.dw or dh != d.dh
    acx, acy = anchor.center
    box = Box.from_center(
        acx + d.dx * anchor.width,
        acy + d.dy * anchor.height,
        anchor.width * math.exp(dw),
        anchor.height * math.exp(dh),
    )
    return Decoded(box, clamped)


def encode_deltas_array(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Row-wise encode_deltas for aligned (N, 4) arrays."""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    gw = gts[:, 2] - gts[:, 0]
    gh = gts[:, 3] - gts[:, 1]
    return np.stack(
        [
            ((gts[:, 0] + gts[:, 2]) - (anchors[:, 0] + anchors[:, 2])) / 2 / aw,
            ((gts[:, 1] + gts[:, 3]) - (anchors[:, 1] + anchors[:, 3])) / 2 / ah,
            np.log(gw / aw),
            np.log(gh / ah),
        ],
        axis=1,
    )


def decode_deltas_array(anchors: np.ndarray, deltas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise decode_deltas; returns (boxes (N, 4), clamped mask (N,))."""
    aw = anchors[:, 2] - anchors[:, 0]
    ah = anchors[:, 3] - anchors[:, 1]
    acx = anchors[:, 0] + aw / 2
    acy = anchors[:, 1] + ah / 2
    dwh = np.clip(deltas[:, 2:4], -DELTA_CLAMP, DELTA_CLAMP)
    clamped = np.any(dwh != deltas[:, 2:4], axis=1)
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(dwh[:, 0])
    h = ah * np.exp(dwh[:, 1])
    boxes = np.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], axis=1)
    return boxes, clamped


def level_shape(image_w: int, image_h: int, stride: int) -> tuple[int, int]:
    """(rows, cols) of a pyramid level, by ceiling division."""
    return -(-image_h // stride), -(-image_w // stride)


def anchor_count(cfg: AnchorConfig, image_w: int, image_h: int) -> int:
    """Closed-form number of anchors generate_anchors produces."""
    return sum(
        rows * cols * cfg.anchors_per_cell
        for rows, cols in (level_shape(image_w, image_h, s) for s in cfg.strides)
    )


def generate_anchors(cfg: AnchorConfig, image_w: int, image_h: int) -> AnchorGrid:
    """Tile square anchors centred at (cell + 0.5) * stride on every level."""
    boxes, levels, cells, shapes = [], [], [], []
    for index, (area, stride) in enumerate(zip(cfg.base_areas, cfg.strides)):
        rows, cols = level_shape(image_w, image_h, stride)
        shapes.append((rows, cols))
        sides = math.sqrt(area) * np.asarray(cfg.scales)
        rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
        cy = ((rr.reshape(-1, 1) + 0.5) * stride).repeat(len(sides), axis=1)
        cx = ((cc.reshape(-1, 1) + 0.5) * stride).repeat(len(sides), axis=1)
        half = np.broadcast_to(sides / 2, cx.shape)
        level_boxes = np.stack([cx - half, cy - half, cx + half, cy + half], axis=-1).reshape(-1, 4)
        boxes.append(level_boxes)
        levels.append(np.full(len(level_boxes), MIN_LEVEL + index, dtype=np.int64))
        cell = np.stack([rr.ravel(), cc.ravel()], axis=1)
        cells.append(np.repeat(cell, len(sides), axis=0))
    return AnchorGrid(
        boxes=np.concatenate(boxes),
        levels=np.concatenate(levels),
        cells=np.concatenate(cells),
        level_shapes=tuple(shapes),
        strides=cfg.strides,
    )


def assign_level(roi: Box, k0: int = 3) -> int:
    """Pyramid level for a RoI: max(2, floor(k0 + log2(sqrt(w*h) / 224))), capped at 6."""
    k = math.floor(k0 + math.log2(math.sqrt(roi.width * roi.height) / CANONICAL_SIZE))
    return min(MAX_LEVEL, max(MIN_LEVEL, k))
