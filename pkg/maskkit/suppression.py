"""
Proposal filtering, greedy NMS, Gaussian Soft-NMS and box voting.
"""

from collections.abc import Sequence
from dataclasses import dataclass, replace

import numpy as np

from .geometry import Box, as_box_array, iou_matrix


@dataclass(frozen=True)
class Detection:
    """A scored box, optionally with 2K landmark coordinates and an origin tag."""

    box: Box
    score: float
    landmarks: np.ndarray | None = None
    source: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"Detection score must be in [0, 1], got {self.score}")

    def to_record(self, image_id: str) -> dict:
        record = {
            "image_id": image_id,
            "x1": self.box.x1,
            "y1": self.box.y1,
            "x2": self.box.x2,
            "y2": self.box.y2,
            "score": self.score,
        }
        if self.landmarks is not None:
            record["landmarks"] = [float(v) for v in np.asarray(self.landmarks).ravel()]
        return record


@dataclass(frozen=True)
class Proposal:
    """A RoI for the keypoint head; ``gt_index`` is set only in training mode."""

    box: Box
    score: float
    gt_index: int | None = None


def _boxes(dets: Sequence[Detection]) -> np.ndarray:
    return as_box_array([d.box for d in dets])


def score_order(dets: Sequence[Detection]) -> np.ndarray:
    """Indices by descending score, ties by input position."""
    scores = np.array([d.score for d in dets], dtype=np.float64)
    return np.argsort(-scores, kind="stable")


def nms_greedy(dets: Sequence[Detection], iou_thresh: float) -> list[Detection]:
    """Keep detections in score order, dropping any with IoU > iou_thresh to a kept one."""
    if not dets:
        return []
    order = score_order(dets)
    overlaps = iou_matrix(_boxes(dets), _boxes(dets))
    suppressed = np.zeros(len(dets), dtype=bool)
    kept = []
    for i in order:
        if suppressed[i]:
            continue
        kept.append(dets[i])
        suppressed |= overlaps[i] > iou_thresh
    return kept


def soft_nms(
    dets: Sequence[Detection],
    sigma: float = 0.5,
    score_floor: float = 0.001,
) -> list[Detection]:
    """
    Gaussian Soft-NMS: repeatedly select the top-scoring detection and decay every
    remaining score by exp(-IoU^2 / sigma); detections below ``score_floor`` are dropped.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not dets:
        return []
    overlaps = iou_matrix(_boxes(dets), _boxes(dets))
    scores = np.array([d.score for d in dets], dtype=np.float64)
    remaining = [i for i in range(len(dets)) if scores[i] >= score_floor]
    result = []
    while remaining:
        best = max(remaining, key=lambda i: (scores[i], -i))
        remaining.remove(best)
        result.append(replace(dets[best], score=float(scores[best])))
        if not remaining:
            break
        idx = np.array(remaining)
        scores[idx] *= np.exp(-(overlaps[best, idx] ** 2) / sigma)
        remaining = [i for i in remaining if scores[i] >= score_floor]
    return result


def box_vote(
    kept: Sequence[Detection],
    pool: Sequence[Detection],
    iou_thresh: float = 0.5,
) -> list[Detection]:
    """Replace each kept box by the score-weighted mean of pool boxes with IoU >= iou_thresh."""
    if not kept:
        return []
    kept_boxes = _boxes(kept)
    pool_boxes = _boxes(pool) if pool else np.zeros((0, 4))
    pool_scores = np.array([d.score for d in pool], dtype=np.float64)
    overlaps = iou_matrix(kept_boxes, pool_boxes)
    refined = []
    for i, det in enumerate(kept):
        voters = overlaps[i] >= iou_thresh
        weights = pool_scores[voters]
        total = weights.sum()
        if not voters.any() or total <= 0:
            refined.append(det)
            continue
        coords = (weights[:, None] * pool_boxes[voters]).sum(axis=0) / total
        refined.append(replace(det, box=Box(*coords)))
    return refined


def filter_proposals(
    dets: Sequence[Detection],
    conf_floor: float = 0.02,
    nms_thresh: float = 0.6,
    gts: Sequence[Box] | None = None,
    iou_keep: float = 0.6,
) -> list[Proposal]:
    """
    Select keypoint-head RoIs: confidence floor, greedy NMS, then in training mode
    (``gts`` given) only proposals with IoU > iou_keep to their best ground truth.
    """
    confident = [d for d in dets if d.score >= conf_floor]
    survivors = nms_greedy(confident, nms_thresh)
    if gts is None:
        return [Proposal(d.box, d.score) for d in survivors]
    if len(gts) == 0 or not survivors:
        return []
    overlaps = iou_matrix(_boxes(survivors), as_box_array(gts))
    best = overlaps.argmax(axis=1)
    return [
        Proposal(d.box, d.score, int(best[i]))
        for i, d in enumerate(survivors)
        if overlaps[i, best[i]] > iou_keep
    ]


def rescale_detection(det: Detection, scale: float, flip_width: float | None = None) -> Detection:
    """Map a detection from an augmented image back to original coordinates."""
    x1, y1, x2, y2 = (v / scale for v in det.box.as_array())
    if flip_width is not None:
        w = flip_width / scale
        x1, x2 = w - x2, w - x1
    return replace(det, box=Box(x1, y1, x2, y2))
