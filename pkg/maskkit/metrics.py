"""
Average precision, normalized mean landmark error and cumulative error distributions.
"""

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from .geometry import Box, as_box_array
from .matching import match_detections
from .suppression import Detection

# Eye landmark indices of the 5-point layout (left eye, right eye, nose, mouth corners)
LEFT_EYE, RIGHT_EYE = 0, 1


class MetricsError(ValueError):
    """Raised when a metric is undefined for its input."""


@dataclass(frozen=True)
class PrCurve:
    """Precision and recall after every rank of the global score-sorted sweep."""

    ap: float
    precision: np.ndarray
    recall: np.ndarray
    scores: np.ndarray
    n_gt: int


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """Area under the right-max interpolated PR curve, summed where recall increases."""
    if len(recall) == 0:
        return 0.0
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    steps = np.diff(np.concatenate(([0.0], recall)))
    return float(np.sum(steps * envelope))


def pr_curve_ap(
    dets: Mapping[str, Sequence[Detection]],
    gts: Mapping[str, Sequence[Box]],
    iou_thresh: float = 0.5,
) -> PrCurve:
    """
    Single-class AP with greedy one-to-one matching per image.

    Detections of all images are swept together by descending score; within an image
    each detection claims the best unmatched ground truth with IoU >= iou_thresh.
    """
    n_gt = sum(len(v) for v in gts.values())
    if n_gt == 0:
        raise MetricsError("AP is undefined without ground-truth boxes")

    rows = []  # (score, image order, det order, is_tp)
    for image_order, image_id in enumerate(sorted(set(dets) | set(gts))):
        image_dets = list(dets.get(image_id, ()))
        if not image_dets:
            continue
        scores = np.array([d.score for d in image_dets])
        matched = match_detections(
            as_box_array([d.box for d in image_dets]),
            scores,
            as_box_array(list(gts.get(image_id, ()))),
            iou_thresh,
        )
        rows.extend((scores[i], image_order, i, matched[i] >= 0) for i in range(len(image_dets)))

    rows.sort(key=lambda r: (-r[0], r[1], r[2]))
    tp = np.array([r[3] for r in rows], dtype=np.float64)
    ctp = np.cumsum(tp)
    ranks = np.arange(1, len(rows) + 1)
    precision = ctp / ranks if len(rows) else np.zeros(0)
    recall = ctp / n_gt
    return PrCurve(
        ap=interpolated_ap(precision, recall),
        precision=precision,
        recall=recall,
        scores=np.array([r[0] for r in rows], dtype=np.float64),
        n_gt=n_gt,
    )


def bbox_normalizer(box: Box) -> float:
    return math.sqrt(box.width * box.height)


def inter_ocular_normalizer(landmarks: np.ndarray) -> float:
    pts = np.asarray(landmarks, dtype=np.float64)
    return float(np.linalg.norm(pts[LEFT_EYE] - pts[RIGHT_EYE]))


def nme(
    pred_landmarks: np.ndarray,
    gt_landmarks: np.ndarray,
    normalizer: float,
    valid: np.ndarray | None = None,
) -> float:
    """Mean Euclidean landmark error over valid keypoints divided by ``normalizer``."""
    if not normalizer > 0:
        raise MetricsError(f"NME normalizer must be positive, got {normalizer}")
    pred = np.asarray(pred_landmarks, dtype=np.float64).reshape(-1, 2)
    gt = np.asarray(gt_landmarks, dtype=np.float64).reshape(-1, 2)
    if pred.shape != gt.shape or len(gt) == 0:
        raise MetricsError(f"landmark shapes differ or are empty: {pred.shape} vs {gt.shape}")
    mask = np.ones(len(gt), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not mask.any():
        raise MetricsError("NME needs at least one valid keypoint")
    errors = np.linalg.norm(pred[mask] - gt[mask], axis=1)
    return float(errors.mean() / normalizer)


@dataclass(frozen=True)
class CedCurve:
    """Empirical CDF of per-face NME; undetected faces count as +inf."""

    errors: np.ndarray  # sorted ascending, +inf for undetected

    @property
    def n(self) -> int:
        return len(self.errors)

    def fraction(self, t: float) -> float:
        """CED(t): fraction of faces with NME <= t."""
        return float(np.searchsorted(self.errors, t, side="right") / self.n)

    def ced_at(self, q: float = 0.95) -> float:
        """Smallest t with CED(t) >= q, i.e. the ceil(q * n)-th order statistic."""
        if not 0 < q <= 1:
            raise MetricsError(f"quantile must be in (0, 1], got {q}")
        rank = max(1, math.ceil(q * self.n - 1e-9))
        return float(self.errors[rank - 1])

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Step points (nme, fraction) at every finite error."""
        finite = self.errors[np.isfinite(self.errors)]
        return finite, np.arange(1, len(finite) + 1) / self.n


def ced_curve(nmes: Sequence[float | None]) -> CedCurve:
    """Build the CED from per-face NMEs; ``None`` or inf marks an undetected face."""
    if len(nmes) == 0:
        raise MetricsError("CED is undefined for an empty set of faces")
    values = np.array([math.inf if v is None else float(v) for v in nmes], dtype=np.float64)
    return CedCurve(errors=np.sort(values))
