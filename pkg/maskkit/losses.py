"""
Multi-task loss: focal classification, smooth-L1 box regression and spatial
keypoint cross-entropy, each returned with its analytic gradient.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .matching import MatchResult
from .models import LossConfig
from .roialign import KeypointTarget

logger = logging.getLogger(__name__)


class LossTerm(NamedTuple):
    """A scalar loss and its gradient with respect to the loss input."""

    value: float
    grad: np.ndarray


@dataclass(frozen=True)
class LossReport:
    """Components of one image's (or batch's) multi-task loss."""

    l_cls: float
    l_box: float
    l_kp: float
    l_total: float
    n_pos: int
    lambda_kp: float

    def as_row(self) -> dict[str, float]:
        return {
            "l_cls": self.l_cls,
            "l_box": self.l_box,
            "l_kp": self.l_kp,
            "l_total": self.l_total,
            "n_pos": self.n_pos,
        }


def _normalizer(n_pos: int, what: str) -> float:
    if n_pos == 0:
        logger.debug("%s: no positive samples, normalizing by 1", what)
    return float(max(n_pos, 1))


def _log_sigmoid(x: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -x)


def sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(_log_sigmoid(x))


def focal_loss(logits: np.ndarray, match: MatchResult, cfg: LossConfig) -> LossTerm:
    """
    Focal loss over positive and negative anchors, normalized by the positive count.

    ``logits`` are per-anchor face logits; probabilities are their logistic map clamped
    to [epsilon, 1 - epsilon]. Ignored anchors contribute nothing.
    """
    x = np.asarray(logits, dtype=np.float64)
    pos = match.positive
    neg = match.negative
    norm = _normalizer(match.n_pos, "focal_loss")
    alpha, gamma, eps = cfg.alpha, cfg.gamma, cfg.epsilon

    p = np.clip(sigmoid(x), eps, 1.0 - eps)
    log_p = np.log(p)
    log_q = np.log1p(-p)
    q = 1.0 - p

    value = -(
        alpha * np.sum(q[pos] ** gamma * log_p[pos])
        + (1 - alpha) * np.sum(p[neg] ** gamma * log_q[neg])
    ) / norm

    grad = np.zeros_like(x)
    grad[pos] = alpha * q[pos] ** gamma * (gamma * p[pos] * log_p[pos] - q[pos])
    grad[neg] = (1 - alpha) * p[neg] ** gamma * (p[neg] - gamma * q[neg] * log_q[neg])
    return LossTerm(float(value), grad / norm)


def smooth_l1(x: np.ndarray, beta: float) -> np.ndarray:
    ax = np.abs(x)
    return np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)


def smooth_l1_loss(
    pred: np.ndarray,
    target: np.ndarray,
    match: MatchResult,
    cfg: LossConfig,
) -> LossTerm:
    """
    Smooth-L1 over the four deltas of positive anchors, normalized by the positive count.

    ``pred`` and ``target`` are (N, 4) arrays aligned with the anchors; rows of
    non-positive anchors are ignored and get zero gradient.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    pos = match.positive
    norm = _normalizer(match.n_pos, "smooth_l1_loss")
    beta = cfg.smooth_l1_beta

    diff = pred[pos] - target[pos]
    value = np.sum(smooth_l1(diff, beta)) / norm
    grad = np.zeros_like(pred)
    grad[pos] = np.where(np.abs(diff) < beta, diff / beta, np.sign(diff)) / norm
    return LossTerm(float(value), grad)


def keypoint_ce_loss(
    logits: np.ndarray,
    targets: Sequence[KeypointTarget],
    cfg: LossConfig,
) -> LossTerm:
    """
    Spatial cross-entropy of K keypoint masks per sample, softmax over all m*m cells.

    ``logits`` has shape (S, K, m, m). Invalid keypoints are excluded and the per-sample
    K shrinks accordingly; samples without any valid keypoint do not count toward the
    normalizing sample count.
    """
    logits = np.asarray(logits, dtype=np.float64)
    grad = np.zeros_like(logits)
    if logits.size == 0 or not targets:
        return LossTerm(0.0, grad)
    if len(targets) != logits.shape[0]:
        raise ValueError(f"got {logits.shape[0]} mask samples but {len(targets)} targets")

    s, k, m, _ = logits.shape
    flat = logits.reshape(s, k, m * m)
    shifted = flat - flat.max(axis=2, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=2, keepdims=True))
    log_softmax = shifted - log_norm
    softmax = np.exp(log_softmax)

    counted = [t for t in targets if t.valid.any()]
    norm = _normalizer(len(counted), "keypoint_ce_loss")
    gflat = grad.reshape(s, k, m * m)
    value = 0.0
    for i, target in enumerate(targets):
        k_i = int(target.valid.sum())
        if k_i == 0:
            continue
        cells = target.indices[:, 0] * m + target.indices[:, 1]
        for kp in np.flatnonzero(target.valid):
            value -= log_softmax[i, kp, cells[kp]] / k_i
            gflat[i, kp] = softmax[i, kp] / k_i
            gflat[i, kp, cells[kp]] -= 1.0 / k_i
    return LossTerm(value / norm, gflat.reshape(logits.shape) / norm)


def total_loss(
    parts: tuple[float, float, float],
    cfg: LossConfig,
    n_pos: int = 0,
) -> LossReport:
    """Weighted sum L_cls + L_box + lambda_kp * L_kp."""
    l_cls, l_box, l_kp = (float(v) for v in parts)
    if not all(np.isfinite(v) for v in (l_cls, l_box, l_kp)):
        raise ValueError(f"loss parts must be finite, got {parts}")
    return LossReport(
        l_cls=l_cls,
        l_box=l_box,
        l_kp=l_kp,
        l_total=l_cls + l_box + cfg.lambda_kp * l_kp,
        n_pos=n_pos,
        lambda_kp=cfg.lambda_kp,
    )
