"""
Desk-scale single-stage face detector with a RoIAlign keypoint head.

Frozen random backbone (C2..C5) -> trainable FPN (P2..P6) -> independent context
modules (M2..M6) -> shared 1x1 classification and box heads. Keypoint masks are
predicted from RoIAlign features of the M level assigned to each RoI.
"""

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .geometry import Box, assign_level, level_shape
from .models import ToyModelConfig

logger = logging.getLogger(__name__)

LEVELS = (2, 3, 4, 5, 6)


@dataclass
class DetectorOutput:
    """Per-level head outputs and the context features they were computed from."""

    cls: list[ad.Tensor]       # (A, h, w) per level
    box: list[ad.Tensor]       # (4A, h, w) per level
    features: list[ad.Tensor]  # M2..M6

    @property
    def cls_logits(self) -> np.ndarray:
        """(N,) anchor logits in anchor-grid order: row-major per level, anchors fastest."""
        return np.concatenate([t.data.transpose(1, 2, 0).reshape(-1) for t in self.cls])

    @property
    def box_deltas(self) -> np.ndarray:
        """(N, 4) anchor deltas in anchor-grid order."""
        parts = []
        for t in self.box:
            a = t.shape[0] // 4
            parts.append(t.data.reshape(a, 4, *t.shape[1:]).transpose(2, 3, 0, 1).reshape(-1, 4))
        return np.concatenate(parts)

    def cls_seeds(self, grad: np.ndarray) -> list[tuple[ad.Tensor, np.ndarray]]:
        """Split an (N,) gradient of the flattened logits back onto the level tensors."""
        seeds, offset = [], 0
        for t in self.cls:
            a, h, w = t.shape
            n = a * h * w
            seeds.append((t, grad[offset : offset + n].reshape(h, w, a).transpose(2, 0, 1)))
            offset += n
        return seeds

    def box_seeds(self, grad: np.ndarray) -> list[tuple[ad.Tensor, np.ndarray]]:
        seeds, offset = [], 0
        for t in self.box:
            a, (h, w) = t.shape[0] // 4, t.shape[1:]
            n = a * h * w
            g = grad[offset : offset + n].reshape(h, w, a, 4).transpose(2, 3, 0, 1).reshape(4 * a, h, w)
            seeds.append((t, g))
            offset += n
        return seeds


def conv_macs(c_in: int, c_out: int, k: int, h: int, w: int) -> int:
    return c_in * c_out * k * k * h * w


class ToyMaskFace:
    """Parameters plus forward passes; all weights are float64 ``Tensor`` leaves."""

    def __init__(self, cfg: ToyModelConfig, seed: int = 0):
        self.cfg = cfg
        self.params: dict[str, ad.Tensor] = {}
        self._rng = np.random.default_rng(seed)
        self._build()

    def _conv(self, name: str, c_in: int, c_out: int, k: int, trainable: bool = True, std: float | None = None) -> None:
        std = math.sqrt(2.0 / (c_in * k * k)) if std is None else std
        self.params[f"{name}.weight"] = ad.Tensor(
            self._rng.normal(0.0, std, size=(c_out, c_in, k, k)), requires_grad=trainable, name=f"{name}.weight"
        )
        self.params[f"{name}.bias"] = ad.Tensor(np.zeros(c_out), requires_grad=trainable, name=f"{name}.bias")

    def _build(self) -> None:
        cfg = self.cfg
        b = cfg.backbone_channels
        f = cfg.fpn_channels
        w1, w2, w3 = cfg.context_widths
        a = cfg.anchors_per_cell

        self._conv("backbone.stem", 3, b[0], 3, trainable=False)
        self._conv("backbone.c2", b[0], b[0], 3, trainable=False)
        for i, level in enumerate((3, 4, 5), 1):
            self._conv(f"backbone.c{level}", b[i - 1], b[i], 3, trainable=False)

        for i, level in enumerate((2, 3, 4, 5)):
            self._conv(f"fpn.lateral{level}", b[i], f, 1)
            self._conv(f"fpn.output{level}", f, f, 3)
        self._conv("fpn.p6", b[3], f, 1)

        if cfg.use_context:
            for level in LEVELS:
                self._conv(f"context{level}.branch1", f, w1, 3)
                self._conv(f"context{level}.reduce", f, w2, 3)
                self._conv(f"context{level}.branch2", w2, w2, 3)
                self._conv(f"context{level}.expand", w2, w3, 3)
                self._conv(f"context{level}.branch3", w3, w3, 3)

        head = cfg.head_channels
        self._conv("head.cls", head, a, 1, std=0.01)
        self.params["head.cls.bias"].data[:] = -math.log((1 - cfg.prior_prob) / cfg.prior_prob)
        self._conv("head.box", head, 4 * a, 1, std=0.01)

        c_in = head
        for i in range(cfg.keypoint_convs):
            self._conv(f"keypoint.conv{i}", c_in, cfg.keypoint_channels, 3)
            c_in = cfg.keypoint_channels
        self.params["keypoint.deconv.weight"] = ad.Tensor(
            self._rng.normal(0.0, math.sqrt(2.0 / (c_in * 16)), size=(c_in, cfg.num_keypoints, 4, 4)),
            requires_grad=True,
            name="keypoint.deconv.weight",
        )
        self.params["keypoint.deconv.bias"] = ad.Tensor(np.zeros(cfg.num_keypoints), requires_grad=True)

    def _apply(self, name: str, x: ad.Tensor, activate: bool = True) -> ad.Tensor:
        y = ad.conv2d(x, self.params[f"{name}.weight"], self.params[f"{name}.bias"])
        return ad.relu(y) if activate else y

    # -- forward ---------------------------------------------------------------

    def backbone(self, image: np.ndarray) -> list[ad.Tensor]:
        """C2..C5 at strides 4..32 from an (H, W, 3) image in [0, 1]."""
        x = ad.Tensor(np.asarray(image, dtype=np.float64).transpose(2, 0, 1) - 0.5)
        x = ad.max_pool2d(self._apply("backbone.stem", x))
        c2 = ad.max_pool2d(self._apply("backbone.c2", x))
        feats = [c2]
        for level in (3, 4, 5):
            feats.append(self._apply(f"backbone.c{level}", ad.max_pool2d(feats[-1])))
        return feats

    def pyramid(self, c_feats: Sequence[ad.Tensor]) -> list[ad.Tensor]:
        """Top-down FPN: P2..P5 from laterals + upsampled coarser levels, P6 from pooled C5."""
        laterals = [self._apply(f"fpn.lateral{lv}", c, activate=False) for lv, c in zip((2, 3, 4, 5), c_feats)]
        merged = [laterals[-1]]
        for lat in reversed(laterals[:-1]):
            merged.insert(0, ad.add(lat, ad.upsample_nearest(merged[0], lat.shape[1:])))
        outs = [self._apply(f"fpn.output{lv}", m, activate=False) for lv, m in zip((2, 3, 4, 5), merged)]
        outs.append(self._apply("fpn.p6", ad.max_pool2d(c_feats[-1]), activate=False))
        return outs

    def context(self, level: int, p: ad.Tensor) -> ad.Tensor:
        """Inception-style context: one, two and three stacked 3x3 convs, concatenated."""
        if not self.cfg.use_context:
            return p
        name = f"context{level}"
        b1 = self._apply(f"{name}.branch1", p)
        t = self._apply(f"{name}.reduce", p)
        b2 = self._apply(f"{name}.branch2", t)
        b3 = self._apply(f"{name}.branch3", self._apply(f"{name}.expand", t))
        return ad.concat([b1, b2, b3])

    def forward(self, image: np.ndarray) -> DetectorOutput:
        features = [self.context(lv, p) for lv, p in zip(LEVELS, self.pyramid(self.backbone(image)))]
        cls = [self._apply("head.cls", m, activate=False) for m in features]
        box = [self._apply("head.box", m, activate=False) for m in features]
        return DetectorOutput(cls=cls, box=box, features=features)

    def keypoint_forward(self, features: Sequence[ad.Tensor], rois: Sequence[Box], k0: int = 3) -> list[ad.Tensor]:
        """(K, m, m) mask logits per RoI, pooled from the level chosen by assign_level."""
        cfg = self.cfg
        masks = []
        for roi in rois:
            level = assign_level(roi, k0)
            x = ad.roi_align(features[level - LEVELS[0]], roi, 2**level, cfg.pooled_size)
            for i in range(cfg.keypoint_convs):
                x = self._apply(f"keypoint.conv{i}", x)
            x = ad.conv_transpose2d(x, self.params["keypoint.deconv.weight"], self.params["keypoint.deconv.bias"])
            masks.append(ad.upsample_bilinear(x, (cfg.mask_size, cfg.mask_size)))
        return masks

    # -- parameters ------------------------------------------------------------

    def trainable(self) -> Iterator[tuple[str, ad.Tensor]]:
        return ((n, p) for n, p in self.params.items() if p.requires_grad)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state: Mapping[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"state is missing tensors: {sorted(missing)}")
        for name, p in self.params.items():
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != p.shape:
                raise ad.ShapeError(f"load {name}", p.shape, value.shape)
            p.data = value.copy()

    # -- cost accounting ---------------------------------------------------------

    def output_shapes(self, h: int, w: int) -> dict[int, tuple[int, int, int]]:
        """Closed-form (anchors, rows, cols) of the classification map per level."""
        a = self.cfg.anchors_per_cell
        return {lv: (a, *level_shape(w, h, 2**lv)) for lv in LEVELS}

    def detection_macs(self, h: int, w: int) -> int:
        """Multiply-accumulates of the dense detection path for an h x w image."""
        cfg = self.cfg
        b, f = cfg.backbone_channels, cfg.fpn_channels
        w1, w2, w3 = cfg.context_widths
        a = cfg.anchors_per_cell
        total = conv_macs(3, b[0], 3, h, w)
        total += conv_macs(b[0], b[0], 3, *level_shape(w, h, 2))
        rows_cols = {lv: level_shape(w, h, 2**lv) for lv in (2, 3, 4, 5, 6)}
        chans = dict(zip((2, 3, 4, 5), b))
        for lv, prev in ((3, b[0]), (4, b[1]), (5, b[2])):
            total += conv_macs(prev, chans[lv], 3, *rows_cols[lv])
        for lv in (2, 3, 4, 5):
            total += conv_macs(chans[lv], f, 1, *rows_cols[lv]) + conv_macs(f, f, 3, *rows_cols[lv])
        total += conv_macs(b[3], f, 1, *rows_cols[6])
        for lv in LEVELS:
            hw = rows_cols[lv]
            if cfg.use_context:
                total += conv_macs(f, w1, 3, *hw) + conv_macs(f, w2, 3, *hw) + conv_macs(w2, w2, 3, *hw)
                total += conv_macs(w2, w3, 3, *hw) + conv_macs(w3, w3, 3, *hw)
            total += conv_macs(cfg.head_channels, 5 * a, 1, *hw)
        return total

    def keypoint_head_macs(self) -> int:
        """Multiply-accumulates of the keypoint head for one proposal (RoIAlign included)."""
        cfg = self.cfg
        s, m, k = cfg.pooled_size, cfg.mask_size, cfg.num_keypoints
        total = cfg.head_channels * s * s * 4 * 4  # 2x2 samples, 4 bilinear taps each
        c_in = cfg.head_channels
        for _ in range(cfg.keypoint_convs):
            total += conv_macs(c_in, cfg.keypoint_channels, 3, s, s)
            c_in = cfg.keypoint_channels
        total += c_in * k * 16 * s * s
        total += k * m * m * 4
        return total


def build_toy_maskface(cfg: ToyModelConfig, seed: int = 0) -> ToyMaskFace:
    model = ToyMaskFace(cfg, seed)
    n_train = sum(p.data.size for _, p in model.trainable())
    n_total = sum(p.data.size for p in model.params.values())
    logger.debug("Built toy detector: %d parameters (%d trainable)", n_total, n_train)
    return model
