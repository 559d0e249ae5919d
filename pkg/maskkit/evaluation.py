"""
Corpus-level evaluation: detection AP, landmark NME and CED, and report files.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

import numpy as np

from .geometry import as_box_array
from .inference import predict, predict_tta
from .matching import match_detections
from .metrics import CedCurve, PrCurve, bbox_normalizer, ced_curve, inter_ocular_normalizer, nme, pr_curve_ap
from .models import NmeNormalizer, RunConfig
from .network import ToyMaskFace
from .storage import scene_name, write_curve, write_detections, write_summary
from .suppression import Detection
from .synthdata import Face, Scene

logger = logging.getLogger(__name__)


@dataclass
class EvalReport:
    ap: float
    pr: PrCurve
    ced: CedCurve
    face_nmes: list[float | None]
    detections: dict[str, list[Detection]] = field(default_factory=dict)
    n_images: int = 0
    tta: bool = False

    @property
    def mean_nme(self) -> float:
        found = [v for v in self.face_nmes if v is not None]
        return float(np.mean(found)) if found else math.inf

    @property
    def landmark_recall(self) -> float:
        return sum(v is not None for v in self.face_nmes) / len(self.face_nmes)

    def summary(self) -> dict:
        return {
            "ap": float(self.ap),
            "ced_at_95": float(self.ced.ced_at(0.95)),
            "landmark_recall": float(self.landmark_recall),
            "mean_nme": float(self.mean_nme),
            "n_detections": sum(len(v) for v in self.detections.values()),
            "n_faces": int(self.pr.n_gt),
            "n_images": self.n_images,
            "test_time_fusion": self.tta,
        }


def face_nme(face: Face, det: Detection, normalizer: NmeNormalizer) -> float | None:
    """NME of one matched detection over the face's visible landmarks."""
    if not face.visible.any():
        return None
    if normalizer is NmeNormalizer.INTER_OCULAR:
        scale = inter_ocular_normalizer(face.landmarks)
    else:
        scale = bbox_normalizer(face.box)
    return nme(det.landmarks, face.landmarks, scale, face.visible)


def landmark_errors(
    faces: Sequence[Face],
    dets: Sequence[Detection],
    iou_thresh: float,
    normalizer: NmeNormalizer,
) -> list[float | None]:
    """
    Per-face NME where each face takes the most confident detection (with landmarks)
    matched to it one-to-one at ``iou_thresh``; unmatched faces get None.
    """
    scored = [d for d in dets if d.landmarks is not None]
    errors: list[float | None] = [None] * len(faces)
    if not faces or not scored:
        return errors
    matched = match_detections(
        as_box_array([d.box for d in scored]),
        np.array([d.score for d in scored]),
        as_box_array([f.box for f in faces]),
        iou_thresh,
    )
    for d, g in enumerate(matched):
        if g >= 0:
            errors[g] = face_nme(faces[g], scored[d], normalizer)
    return errors


def evaluate_corpus(model: ToyMaskFace, scenes: Sequence[Scene], cfg: RunConfig) -> EvalReport:
    """Predict on every scene and compute AP, NME and the CED curve."""
    ev = cfg.eval
    tta = ev.multi_scale or ev.flip
    start = datetime.now()
    logger.info("Evaluating %d scenes (test-time fusion: %s)", len(scenes), tta)

    detections: dict[str, list[Detection]] = {}
    gts = {}
    nmes: list[float | None] = []
    for index, scene in enumerate(scenes):
        image_id = scene_name(index)
        single = predict(model, scene.image, cfg, with_landmarks=True)
        detections[image_id] = predict_tta(model, scene.image, cfg) if tta else single
        gts[image_id] = scene.boxes
        errors = landmark_errors(scene.faces, single, ev.landmark_iou, ev.nme_normalizer)
        nmes.extend(e for e, f in zip(errors, scene.faces) if f.visible.any())
        if (index + 1) % 50 == 0:
            logger.info("[%d/%d] scenes evaluated", index + 1, len(scenes))

    pr = pr_curve_ap(detections, gts, ev.ap_iou)
    report = EvalReport(
        ap=pr.ap,
        pr=pr,
        ced=ced_curve(nmes),
        face_nmes=nmes,
        detections=detections,
        n_images=len(scenes),
        tta=tta,
    )
    _log_summary(report, datetime.now() - start)
    return report


def write_report(report: EvalReport, out_dir: Path) -> dict[str, Path]:
    """Write detections, summary and curve files; returns their paths."""
    out_dir = Path(out_dir)
    paths = {
        "detections": out_dir / "detections.jsonl",
        "summary": out_dir / "summary.yaml",
        "pr_curve": out_dir / "pr_curve.csv",
        "ced_curve": out_dir / "ced_curve.csv",
    }
    write_detections(paths["detections"], report.detections)
    write_summary(paths["summary"], report.summary())
    write_curve(paths["pr_curve"], report.pr.recall, report.pr.precision, ("recall", "precision"))
    write_curve(paths["ced_curve"], *report.ced.points(), ("nme", "fraction"))
    return paths


def _log_summary(report: EvalReport, elapsed) -> None:
    logger.info("")
    logger.info("=" * 60)
    logger.info("EVALUATION COMPLETE")
    logger.info("AP@IoU: %.4f | Faces: %d | Detections: %d",
                report.ap, report.pr.n_gt, sum(len(v) for v in report.detections.values()))
    logger.info("Mean NME: %.4f | CED@0.95: %.4f | Landmark recall: %.3f",
                report.mean_nme, report.ced.ced_at(0.95), report.landmark_recall)
    logger.info("Time: %s", elapsed)
    logger.info("=" * 60)
