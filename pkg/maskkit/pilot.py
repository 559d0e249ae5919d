"""
Pilot runs that establish and check the toy detector's regression bounds.

A pilot trains a detection-only model (lambda_kp = 0) to measure how far the detection
loss falls, sweeps lambda_kp with single-scale evaluation on the held-out corpus, and
compares fused against single-scale AP for the configured lambda_kp.
"""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta

import numpy as np

from .evaluation import evaluate_corpus
from .models import RunConfig
from .network import ToyMaskFace
from .synthdata import Scene
from .trainer import train_toy

logger = logging.getLogger(__name__)

SWEEP_LAMBDAS = (0.05, 0.25, 1.0)
LOSS_WINDOW = 50


@dataclass(frozen=True)
class RegressionBounds:
    """Frozen expectations for a desk-scale pilot (512 scenes of 160 px, 2000 steps)."""

    max_detection_loss_ratio: float = 0.2
    min_ap: float = 0.90
    max_mean_nme: float = 0.05
    fused_ap_slack: float = 0.0

    def __post_init__(self):
        if self.max_detection_loss_ratio <= 0:
            raise ValueError(f"max_detection_loss_ratio must be > 0, got {self.max_detection_loss_ratio}")
        if not 0 <= self.min_ap <= 1:
            raise ValueError(f"min_ap must be in [0, 1], got {self.min_ap}")
        if self.max_mean_nme <= 0 or self.fused_ap_slack < 0:
            raise ValueError("max_mean_nme must be > 0 and fused_ap_slack >= 0")


def detection_loss_ratio(trace: Sequence[dict], window: int = LOSS_WINDOW) -> float:
    """Mean L_cls + L_box over the last ``window`` trace rows, over the first row's value."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    if not trace:
        raise ValueError("detection_loss_ratio needs a non-empty trace")
    det = np.array([row["l_cls"] + row["l_box"] for row in trace], dtype=np.float64)
    if det[0] <= 0:
        raise ValueError(f"initial detection loss must be > 0, got {det[0]}")
    return float(det[-window:].mean() / det[0])


@dataclass
class PilotReport:
    """Measurements of one pilot and their comparison against ``bounds``."""

    reference_lambda: float
    detection_loss_ratio: float = math.nan
    sweep: list[dict] = field(default_factory=list)
    single_ap: float = math.nan
    fused_ap: float = math.nan
    bounds: RegressionBounds = field(default_factory=RegressionBounds)
    start_time: datetime | None = None
    end_time: datetime | None = None

    @property
    def elapsed(self) -> timedelta:
        if not self.start_time:
            return timedelta(0)
        return (self.end_time or datetime.now()) - self.start_time

    @property
    def reference(self) -> dict:
        for row in self.sweep:
            if row["lambda_kp"] == self.reference_lambda:
                return row
        raise KeyError(f"no sweep entry for lambda_kp={self.reference_lambda}")

    @property
    def nme_trend(self) -> bool:
        """Mean NME does not rise as lambda_kp grows."""
        nmes = [row["mean_nme"] for row in sorted(self.sweep, key=lambda r: r["lambda_kp"])]
        return all(b <= a for a, b in zip(nmes, nmes[1:]))

    def checks(self) -> dict[str, tuple[float, float, bool]]:
        """(measured, bound, passed) per regression bound."""
        b = self.bounds
        ref = self.reference
        fused_floor = self.single_ap - b.fused_ap_slack
        return {
            "detection_loss_ratio": (
                self.detection_loss_ratio,
                b.max_detection_loss_ratio,
                self.detection_loss_ratio < b.max_detection_loss_ratio,
            ),
            "ap": (ref["ap"], b.min_ap, ref["ap"] >= b.min_ap),
            "mean_nme": (ref["mean_nme"], b.max_mean_nme, ref["mean_nme"] <= b.max_mean_nme),
            "fused_ap": (self.fused_ap, fused_floor, self.fused_ap >= fused_floor),
        }

    @property
    def passed(self) -> bool:
        return all(ok for _, _, ok in self.checks().values())

    def rows(self) -> list[dict]:
        return [
            {"name": name, "value": value, "bound": bound, "passed": ok}
            for name, (value, bound, ok) in self.checks().items()
        ]


class Pilot:
    """
    Trains and evaluates the pilot's models on in-memory corpora.

    The sweep always contains the configured lambda_kp; that run is the reference for
    the AP, NME and fused-AP bounds.
    """

    def __init__(
        self,
        config: RunConfig,
        train_scenes: Sequence[Scene],
        holdout_scenes: Sequence[Scene],
        lambdas: Sequence[float] = SWEEP_LAMBDAS,
        bounds: RegressionBounds | None = None,
        window: int = LOSS_WINDOW,
    ):
        if not train_scenes or not holdout_scenes:
            raise ValueError("a pilot needs training and held-out scenes")
        if any(lam < 0 for lam in lambdas):
            raise ValueError(f"lambda_kp values must be >= 0, got {tuple(lambdas)}")
        self.config = config
        self.train_scenes = list(train_scenes)
        self.holdout_scenes = list(holdout_scenes)
        self.lambdas = tuple(sorted(set(lambdas) | {config.loss.lambda_kp}))
        self.bounds = bounds or RegressionBounds()
        self.window = window

    def _with_lambda(self, lambda_kp: float) -> RunConfig:
        cfg = self.config
        single = replace(cfg.eval, multi_scale=False, flip=False)
        return replace(cfg, loss=replace(cfg.loss, lambda_kp=lambda_kp), eval=single)

    def run(self) -> PilotReport:
        report = PilotReport(
            reference_lambda=self.config.loss.lambda_kp,
            bounds=self.bounds,
            start_time=datetime.now(),
        )
        self._log_start()

        logger.info("Detection-only run (lambda_kp = 0)")
        _, stats = train_toy(self.train_scenes, self._with_lambda(0.0))
        report.detection_loss_ratio = detection_loss_ratio(stats.trace, self.window)

        reference: tuple[ToyMaskFace, RunConfig] | None = None
        for lam in self.lambdas:
            logger.info("Sweep run: lambda_kp = %g", lam)
            cfg = self._with_lambda(lam)
            model, stats = train_toy(self.train_scenes, cfg)
            summary = evaluate_corpus(model, self.holdout_scenes, cfg).summary()
            report.sweep.append({
                "lambda_kp": lam,
                "ap": summary["ap"],
                "mean_nme": summary["mean_nme"],
                "ced_at_95": summary["ced_at_95"],
                "final_loss": stats.final_loss,
            })
            if lam == report.reference_lambda:
                reference = (model, cfg)

        model, cfg = reference
        report.single_ap = report.reference["ap"]
        fused = replace(cfg, eval=replace(cfg.eval, multi_scale=True, flip=True))
        report.fused_ap = evaluate_corpus(model, self.holdout_scenes, fused).ap

        report.end_time = datetime.now()
        self._log_summary(report)
        return report

    def _log_start(self) -> None:
        cfg = self.config
        logger.info("")
        logger.info("#" * 60)
        logger.info("Starting pilot: %d steps per run, %d + 1 runs", cfg.train.steps, len(self.lambdas))
        logger.info("Training scenes: %d | Held-out scenes: %d", len(self.train_scenes), len(self.holdout_scenes))
        logger.info("lambda_kp sweep: %s | reference: %g",
                    ", ".join(f"{lam:g}" for lam in self.lambdas), cfg.loss.lambda_kp)
        logger.info("#" * 60)

    def _log_summary(self, report: PilotReport) -> None:
        logger.info("")
        logger.info("=" * 60)
        logger.info("PILOT COMPLETE")
        for name, (value, bound, ok) in report.checks().items():
            logger.info("%-22s %.4f (bound %.4f) %s", name, value, bound, "ok" if ok else "FAIL")
        logger.info("NME falls with lambda_kp: %s | Time: %s", report.nme_trend, report.elapsed)
        logger.info("=" * 60)
        if not report.passed:
            failed = [name for name, (_, _, ok) in report.checks().items() if not ok]
            logger.warning("Regression bounds missed: %s", ", ".join(failed))


def run_pilot(
    train_scenes: Sequence[Scene],
    holdout_scenes: Sequence[Scene],
    config: RunConfig,
    lambdas: Sequence[float] = SWEEP_LAMBDAS,
    bounds: RegressionBounds | None = None,
) -> PilotReport:
    """Run the detection-only, lambda_kp sweep and test-time fusion comparisons."""
    return Pilot(config, train_scenes, holdout_scenes, lambdas, bounds).run()
