"""
Wall-clock benchmarks: operator timings and the per-proposal cost of the keypoint head.
"""

import logging
import time
from collections.abc import Callable
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .geometry import Box
from .models import ToyModelConfig
from .network import ToyMaskFace, build_toy_maskface
from .suppression import Detection, nms_greedy

logger = logging.getLogger(__name__)

PROPOSAL_COUNTS = (1, 2, 4, 8, 16)


@dataclass
class BenchReport:
    op_timings: dict[str, float] = field(default_factory=dict)  # seconds per call
    proposal_counts: tuple[int, ...] = PROPOSAL_COUNTS
    head_times: list[float] = field(default_factory=list)
    detection_time: float = 0.0
    detection_macs: int = 0
    keypoint_macs: int = 0

    @property
    def mac_ratio(self) -> float:
        return self.keypoint_macs / self.detection_macs

    @property
    def time_slope(self) -> float:
        """Least-squares seconds per extra proposal."""
        return float(np.polyfit(self.proposal_counts, self.head_times, 1)[0])

    @property
    def time_ratio(self) -> float:
        return self.time_slope / self.detection_time

    @property
    def consistent(self) -> bool:
        """Measured per-proposal cost within +-50% of the MAC prediction."""
        return 0.5 * self.mac_ratio <= self.time_ratio <= 1.5 * self.mac_ratio

    def rows(self) -> list[dict]:
        rows = [{"name": name, "seconds": sec} for name, sec in sorted(self.op_timings.items())]
        rows += [{"name": f"keypoint_head_x{n}", "seconds": t} for n, t in zip(self.proposal_counts, self.head_times)]
        rows.append({"name": "detection_forward", "seconds": self.detection_time})
        return rows


def time_call(fn: Callable[[], object], repeats: int = 5) -> float:
    """Median wall time of ``fn`` over ``repeats`` runs, after one warm-up call."""
    fn()
    samples = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - start)
    return float(np.median(samples))


def _op_benchmarks(rng: np.random.Generator, size: int) -> dict[str, Callable[[], object]]:
    x = ad.Tensor(rng.normal(size=(16, size, size)), requires_grad=True)
    w3 = ad.Tensor(rng.normal(size=(16, 16, 3, 3)), requires_grad=True)
    wt = ad.Tensor(rng.normal(size=(16, 5, 4, 4)), requires_grad=True)
    roi = Box(size * 0.1, size * 0.1, size * 0.7, size * 0.8)
    dets = [
        Detection(Box.from_center(*rng.uniform(0, size * 4, 2), *rng.uniform(8, 40, 2)), float(s))
        for s in rng.random(500)
    ]

    def conv_backward():
        y = ad.conv2d(x, w3)
        ad.backward([(y, np.ones(y.shape))])

    return {
        "conv3x3_forward": lambda: ad.conv2d(x, w3),
        "conv3x3_backward": conv_backward,
        "conv_transpose2d_forward": lambda: ad.conv_transpose2d(ad.Tensor(x.data[:, :14, :14]), wt),
        "max_pool2d_forward": lambda: ad.max_pool2d(x),
        "roi_align_forward": lambda: ad.roi_align(x, roi, 1, 14),
        "nms_greedy_500": lambda: nms_greedy(dets, 0.6),
    }


def run_bench(cfg: ToyModelConfig | None = None, seed: int = 0, repeats: int = 5) -> BenchReport:
    """Time core operators, the detection path, and the keypoint head for growing proposal counts."""
    cfg = cfg or ToyModelConfig()
    rng = np.random.default_rng(seed)
    model: ToyMaskFace = build_toy_maskface(cfg, seed)
    size = cfg.input_size
    image = rng.random((size, size, 3))

    report = BenchReport(
        detection_macs=model.detection_macs(size, size),
        keypoint_macs=model.keypoint_head_macs(),
    )
    for name, fn in _op_benchmarks(rng, size // 4).items():
        report.op_timings[name] = time_call(fn, repeats)
        logger.info("%-26s %.6f s", name, report.op_timings[name])

    report.detection_time = time_call(lambda: model.forward(image), repeats)
    features = model.forward(image).features
    for n in report.proposal_counts:
        rois = [Box.from_center(*rng.uniform(size * 0.3, size * 0.7, 2), *rng.uniform(20, 60, 2)) for _ in range(n)]
        report.head_times.append(time_call(lambda rois=rois: model.keypoint_forward(features, rois), repeats))

    logger.info("Keypoint head: %.2f%% of detection MACs, %.2f%% of detection time per proposal",
                100 * report.mac_ratio, 100 * report.time_ratio)
    return report
