"""
Anchor labelling against ground truth, and one-to-one prediction matching for evaluation.
"""

from collections.abc import Sequence
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import AnchorGrid, Box, as_box_array, iou_matrix


class MatchLabel(IntEnum):
    IGNORE = -1
    NEGATIVE = 0
    POSITIVE = 1


@dataclass(frozen=True)
class MatchResult:
    """Per-anchor labels and matched ground-truth indices (-1 unless positive)."""

    labels: np.ndarray
    gt_index: np.ndarray
    max_iou: np.ndarray

    @property
    def n_pos(self) -> int:
        return int(np.count_nonzero(self.labels == MatchLabel.POSITIVE))

    @property
    def positive(self) -> np.ndarray:
        return self.labels == MatchLabel.POSITIVE

    @property
    def negative(self) -> np.ndarray:
        return self.labels == MatchLabel.NEGATIVE


def match_anchors(
    anchors: AnchorGrid | np.ndarray,
    gts: Sequence[Box] | np.ndarray,
    t_pos: float = 0.5,
    t_neg: float = 0.3,
    low_quality: bool = True,
) -> MatchResult:
    """
    Label anchors positive (IoU > t_pos), negative (IoU < t_neg) or ignore.

    With ``low_quality`` every anchor that attains some ground truth's maximum IoU is
    made positive (if it is not already) and matched to its own highest-IoU ground truth.
    Ties between ground truths resolve to the lowest ground-truth index.
    """
    if t_neg > t_pos:
        raise ValueError(f"t_neg must not exceed t_pos, got t_neg={t_neg}, t_pos={t_pos}")
    boxes = anchors.boxes if isinstance(anchors, AnchorGrid) else as_box_array(anchors)
    gt_boxes = as_box_array(gts)
    n = len(boxes)

    if len(gt_boxes) == 0:
        return MatchResult(
            labels=np.full(n, MatchLabel.NEGATIVE, dtype=np.int8),
            gt_index=np.full(n, -1, dtype=np.int64),
            max_iou=np.zeros(n),
        )

    overlaps = iou_matrix(boxes, gt_boxes)
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best_gt]

    labels = np.full(n, MatchLabel.IGNORE, dtype=np.int8)
    labels[best_iou < t_neg] = MatchLabel.NEGATIVE
    labels[best_iou > t_pos] = MatchLabel.POSITIVE

    if low_quality:
        gt_best = overlaps.max(axis=0)
        hits = (overlaps == gt_best[None, :]) & (gt_best[None, :] > 0)
        labels[hits.any(axis=1)] = MatchLabel.POSITIVE

    gt_index = np.where(labels == MatchLabel.POSITIVE, best_gt, -1).astype(np.int64)
    return MatchResult(labels=labels, gt_index=gt_index, max_iou=best_iou)


def match_detections(
    det_boxes: np.ndarray,
    det_scores: np.ndarray,
    gt_boxes: np.ndarray,
    iou_thresh: float,
) -> np.ndarray:
    """
    Greedy one-to-one matching by descending score.

    Each detection takes the unmatched ground truth of highest IoU among those with
    IoU >= iou_thresh. Returns the matched ground-truth index per detection, or -1.
    """
    det_boxes = as_box_array(det_boxes)
    gt_boxes = as_box_array(gt_boxes)
    result = np.full(len(det_boxes), -1, dtype=np.int64)
    if len(det_boxes) == 0 or len(gt_boxes) == 0:
        return result

    overlaps = iou_matrix(det_boxes, gt_boxes)
    taken = np.zeros(len(gt_boxes), dtype=bool)
    order = np.argsort(-np.asarray(det_scores, dtype=np.float64), kind="stable")
    for d in order:
        candidates = np.where(~taken & (overlaps[d] >= iou_thresh), overlaps[d], -1.0)
        g = int(candidates.argmax())
        if candidates[g] >= iou_thresh:
            taken[g] = True
            result[d] = g
    return result
