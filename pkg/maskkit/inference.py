"""
Detection and landmark prediction, single-scale or fused over flips and an image pyramid.
"""

import logging
from collections.abc import Sequence
from dataclasses import replace

import numpy as np

from .geometry import generate_anchors
from .models import RunConfig
from .network import ToyMaskFace
from .roialign import decode_keypoint_mask
from .suppression import Detection, box_vote, nms_greedy, rescale_detection, soft_nms
from .synthdata import Scene, hflip, rescale
from .trainer import decode_candidates

logger = logging.getLogger(__name__)


def _raw_detections(model: ToyMaskFace, image: np.ndarray, cfg: RunConfig):
    h, w = image.shape[:2]
    grid = generate_anchors(cfg.anchors, w, h)
    out = model.forward(image)
    dets = decode_candidates(
        grid, out.cls_logits, out.box_deltas, w, h, cfg.eval.pre_nms_top_n, cfg.eval.conf_floor
    )
    return dets, out


def attach_landmarks(model: ToyMaskFace, features, dets: Sequence[Detection], k0: int) -> list[Detection]:
    """Run the keypoint head on each detection and store arg-max landmarks."""
    if not dets:
        return []
    masks = model.keypoint_forward(features, [d.box for d in dets], k0)
    return [
        Detection(d.box, d.score, decode_keypoint_mask(m.data, d.box), d.source)
        for d, m in zip(dets, masks)
    ]


def predict(model: ToyMaskFace, image: np.ndarray, cfg: RunConfig, with_landmarks: bool = True) -> list[Detection]:
    """
    Single-scale inference: confidence floor, top-N, greedy NMS, then keypoint masks for
    the ``max_landmark_dets`` most confident survivors.
    """
    ev = cfg.eval
    dets, out = _raw_detections(model, image, cfg)
    kept = nms_greedy(dets, ev.nms_thresh)[: ev.max_detections]
    if not with_landmarks or ev.max_landmark_dets == 0:
        return kept
    n = min(ev.max_landmark_dets, len(kept))
    return attach_landmarks(model, out.features, kept[:n], ev.k0) + kept[n:]


def predict_tta(model: ToyMaskFace, image: np.ndarray, cfg: RunConfig) -> list[Detection]:
    """
    Test-time fusion: per (scale, flip) view Soft-NMS, join all views, greedy NMS over
    the pool and box voting of each kept box against the joint pool.
    """
    ev = cfg.eval
    scales = ev.scales if ev.multi_scale else (1.0,)
    flips = (False, True) if ev.flip else (False,)
    base = Scene(image=image)
    pool: list[Detection] = []
    for scale in scales:
        view = rescale(base, scale)
        factor = view.width / base.width
        for flip in flips:
            img = hflip(view).image if flip else view.image
            dets, _ = _raw_detections(model, img, cfg)
            dets = soft_nms(dets, ev.soft_nms_sigma, ev.soft_nms_floor)
            tag = f"s{scale:g}{'f' if flip else ''}"
            for d in dets:
                pool.append(replace(rescale_detection(d, factor, view.width if flip else None), source=tag))
    kept = nms_greedy(pool, ev.nms_thresh)[: ev.max_detections]
    logger.debug("TTA: %d pooled detections, %d kept", len(pool), len(kept))
    return box_vote(kept, pool, ev.vote_iou)
