"""
Central finite-difference checks for every differentiable operator, every loss and the
assembled model.
"""

import logging
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Box
from .losses import LossTerm, focal_loss, keypoint_ce_loss, smooth_l1_loss
from .matching import MatchLabel, MatchResult
from .models import LossConfig, RunConfig, ToyModelConfig, TrainConfig
from .network import build_toy_maskface
from .roialign import KeypointTarget
from .synthdata import generate_scene
from .trainer import compute_image_loss

logger = logging.getLogger(__name__)

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
EPS = 1e-5


@dataclass(frozen=True)
class GradcheckResult:
    name: str
    instances: int
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, eps: float = EPS) -> np.ndarray:
    grad = np.zeros_like(x)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        plus = f(x)
        flat[i] = orig - eps
        minus = f(x)
        flat[i] = orig
        gflat[i] = (plus - minus) / (2 * eps)
    return grad


def check_operator(
    fn: Callable[[list[ad.Tensor]], ad.Tensor],
    inputs: Sequence[np.ndarray],
    rng: np.random.Generator,
) -> float:
    """Max relative error of d<r, fn(x)>/dx over all inputs for a random projection r."""
    tensors = [ad.Tensor(x.copy(), requires_grad=True) for x in inputs]
    out = fn(tensors)
    proj = rng.normal(size=out.shape)
    ad.backward([(out, proj)])

    worst = 0.0
    values = [x.copy() for x in inputs]
    for i, t in enumerate(tensors):
        def scalar(v, i=i):
            args = [ad.Tensor(v if j == i else values[j]) for j in range(len(values))]
            return float(np.sum(proj * fn(args).data))

        numeric = numeric_gradient(scalar, values[i])
        analytic = t.grad if t.grad is not None else np.zeros_like(values[i])
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def check_loss(fn: Callable[[np.ndarray], LossTerm], x: np.ndarray) -> float:
    analytic = fn(x).grad
    numeric = numeric_gradient(lambda v: fn(v).value, x.copy())
    return relative_error(analytic, numeric)


def _operator_cases(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    def shape():
        return int(rng.integers(1, 4)), int(rng.integers(3, 7)), int(rng.integers(3, 7))

    def conv(k):
        c, h, w = shape()
        o = int(rng.integers(1, 4))
        inputs = [rng.normal(size=(c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)]
        return check_operator(lambda t: ad.conv2d(*t), inputs, rng)

    def deconv():
        c, h, w = shape()
        o = int(rng.integers(1, 4))
        inputs = [rng.normal(size=(c, h, w)), rng.normal(size=(c, o, 4, 4)), rng.normal(size=o)]
        return check_operator(lambda t: ad.conv_transpose2d(*t), inputs, rng)

    def unary(op):
        return check_operator(lambda t: op(t[0]), [rng.normal(size=shape())], rng)

    def upsample(op, factor):
        c, h, w = shape()
        return check_operator(lambda t: op(t[0], (h * factor, w * factor)), [rng.normal(size=(c, h, w))], rng)

    def add():
        s = shape()
        return check_operator(lambda t: ad.add(*t), [rng.normal(size=s), rng.normal(size=s)], rng)

    def concat():
        _, h, w = shape()
        inputs = [rng.normal(size=(int(rng.integers(1, 4)), h, w)) for _ in range(3)]
        return check_operator(lambda t: ad.concat(t), inputs, rng)

    def roi():
        c, h, w = shape()
        stride = int(rng.choice([4, 8, 16]))
        x1, y1 = rng.uniform(-1, w * stride * 0.6), rng.uniform(-1, h * stride * 0.6)
        box = Box(x1, y1, x1 + rng.uniform(1, w * stride), y1 + rng.uniform(1, h * stride))
        return check_operator(lambda t: ad.roi_align(t[0], box, stride, out_size=4), [rng.normal(size=(c, h, w))], rng)

    return {
        "conv3x3": lambda: conv(3),
        "conv1x1": lambda: conv(1),
        "relu": lambda: unary(ad.relu),
        "sigmoid": lambda: unary(ad.sigmoid),
        "max_pool2d": lambda: unary(ad.max_pool2d),
        "upsample_nearest": lambda: upsample(ad.upsample_nearest, 2),
        "upsample_bilinear": lambda: upsample(ad.upsample_bilinear, 2),
        "add": add,
        "concat": concat,
        "conv_transpose2d": deconv,
        "roi_align": roi,
    }


def _random_match(rng: np.random.Generator, n: int) -> MatchResult:
    labels = rng.choice([MatchLabel.IGNORE, MatchLabel.NEGATIVE, MatchLabel.POSITIVE], size=n).astype(np.int8)
    labels[0] = MatchLabel.POSITIVE
    gt_index = np.where(labels == MatchLabel.POSITIVE, 0, -1)
    return MatchResult(labels=labels, gt_index=gt_index, max_iou=np.zeros(n))


def _loss_cases(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    cfg = LossConfig()

    def focal():
        n = int(rng.integers(4, 20))
        match = _random_match(rng, n)
        return check_loss(lambda x: focal_loss(x, match, cfg), rng.normal(0, 2, size=n))

    def box():
        n = int(rng.integers(2, 10))
        match = _random_match(rng, n)
        target = rng.normal(size=(n, 4))
        # keep |pred - target| away from the beta kink
        offset = rng.choice([-1, 1], size=(n, 4)) * rng.uniform(0.05, 3.0, size=(n, 4))
        offset[np.abs(np.abs(offset) - cfg.smooth_l1_beta) < 0.05] += 0.2
        return check_loss(lambda x: smooth_l1_loss(x, target, match, cfg), target + offset)

    def keypoint():
        s, k, m = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(3, 6))
        roi = Box(0.0, 0.0, float(m), float(m))
        targets = [
            KeypointTarget(
                indices=rng.integers(0, m, size=(k, 2)),
                valid=rng.random(k) < 0.8,
                roi=roi,
                m=m,
            )
            for _ in range(s)
        ]
        return check_loss(lambda x: keypoint_ce_loss(x, targets, cfg), rng.normal(size=(s, k, m, m)))

    return {"focal_loss": focal, "smooth_l1_loss": box, "keypoint_ce_loss": keypoint}


def check_model(seed: int = 0, n_weights: int = 6) -> float:
    """
    d L_total / d w for randomly chosen trainable weights on a frozen 64 x 64 single-face
    scene. Keypoint RoIs are pinned to the ground-truth box so the loss is smooth in w.
    """
    rng = np.random.default_rng(seed)
    scene = generate_scene(seed, 64, 64, 1, (24.0, 40.0))
    cfg = RunConfig(
        image_size=64,
        model=ToyModelConfig(input_size=64),
        train=TrainConfig(include_gt_proposals=True, max_keypoint_rois=len(scene.faces)),
    )
    model = build_toy_maskface(cfg.model, seed)
    model.zero_grad()
    loss = compute_image_loss(model, scene, cfg)
    ad.backward(loss.seeds)

    def total() -> float:
        return compute_image_loss(model, scene, cfg).report.l_total

    params = [p for _, p in model.trainable() if p.grad is not None and np.abs(p.grad).max() > 1e-6]
    worst = 0.0
    for _ in range(n_weights):
        p = params[int(rng.integers(len(params)))]
        candidates = np.flatnonzero(np.abs(p.grad).ravel() > 1e-6)
        idx = int(rng.choice(candidates))
        flat = p.data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + EPS
        plus = total()
        flat[idx] = orig - EPS
        minus = total()
        flat[idx] = orig
        numeric = (plus - minus) / (2 * EPS)
        analytic = p.grad.reshape(-1)[idx]
        worst = max(worst, relative_error(np.array([analytic]), np.array([numeric])))
    return worst


def run_gradcheck(seed: int = 0, instances: int = 10) -> list[GradcheckResult]:
    """Check every operator and loss on ``instances`` random cases, then the full model."""
    rng = np.random.default_rng(seed)
    results = []
    for name, case in {**_operator_cases(rng), **_loss_cases(rng)}.items():
        worst = max(case() for _ in range(instances))
        results.append(GradcheckResult(name, instances, worst, OP_TOLERANCE))
        logger.debug("%s: max relative error %.3e", name, worst)
    results.append(GradcheckResult("end_to_end", 1, check_model(seed), MODEL_TOLERANCE))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.warning("Gradient check failed for: %s", ", ".join(failed))
    return results

