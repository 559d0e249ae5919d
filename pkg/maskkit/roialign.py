"""
RoIAlign pooling and the one-hot keypoint mask encoding/decoding.

Coordinates follow the half-pixel convention: feature cell ``i`` covers the continuous
interval ``[i, i + 1)`` in feature units and its value sits at ``i + 0.5``. Samples that
fall outside the map read zeros.
"""

from dataclasses import dataclass

import numpy as np

from .geometry import Box

VALID_STRIDES = (4, 8, 16, 32, 64)
MIN_ROI_EXTENT = 1e-6


class RoIAlignError(ValueError):
    """Raised for RoIs that collapse to nothing on the feature map."""


@dataclass(frozen=True)
class FeatureMap:
    """(C, H, W) feature grid with its stride relative to the image."""

    data: np.ndarray
    stride: int

    def __post_init__(self):
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValueError(f"FeatureMap needs a (C, H, W) array with positive dims, got {self.data.shape}")
        if self.stride not in VALID_STRIDES:
            raise ValueError(f"unsupported stride {self.stride}")


@dataclass(frozen=True)
class KeypointTarget:
    """One-hot mask target: (row, col) cell per keypoint plus validity flags."""

    indices: np.ndarray  # (K, 2) int, (j*, l*)
    valid: np.ndarray    # (K,) bool
    roi: Box
    m: int


def _axis_matrix(start: float, extent: float, size: int, out_size: int, sampling_ratio: int) -> np.ndarray:
    """(out_size, size) weights: bin-averaged linear interpolation along one axis."""
    bin_size = extent / out_size
    offsets = (np.arange(sampling_ratio) + 0.5) / sampling_ratio
    pos = start + (np.arange(out_size)[:, None] + offsets[None, :]) * bin_size  # (out, sr)
    pos = pos.ravel() - 0.5
    lo = np.floor(pos).astype(np.int64)
    frac = pos - lo
    weights = np.zeros((pos.size, size))
    rows = np.arange(pos.size)
    for idx, w in ((lo, 1.0 - frac), (lo + 1, frac)):
        inside = (idx >= 0) & (idx < size)
        weights[rows[inside], idx[inside]] += w[inside]
    return weights.reshape(out_size, sampling_ratio, size).mean(axis=1)


def sampling_matrix(
    roi: Box,
    height: int,
    width: int,
    stride: int,
    out_size: int,
    sampling_ratio: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Separable RoIAlign weights (A_y, A_x) so that ``out[c] = A_y @ F[c] @ A_x.T``.

    Bilinear sampling on an axis-aligned grid factorizes per axis, so pooling is two
    small matrix products and its adjoint is the transposed pair.
    """
    if out_size < 1 or sampling_ratio < 1:
        raise ValueError(f"out_size and sampling_ratio must be >= 1, got {out_size}, {sampling_ratio}")
    x1, y1 = roi.x1 / stride, roi.y1 / stride
    w, h = roi.width / stride, roi.height / stride
    if w < MIN_ROI_EXTENT or h < MIN_ROI_EXTENT:
        raise RoIAlignError(f"RoI {roi} is degenerate at stride {stride}")
    a_y = _axis_matrix(y1, h, height, out_size, sampling_ratio)
    a_x = _axis_matrix(x1, w, width, out_size, sampling_ratio)
    return a_y, a_x


def roi_align(fmap: FeatureMap, roi: Box, out_size: int = 14, sampling_ratio: int = 2) -> np.ndarray:
    """Pool ``roi`` (image coordinates) from ``fmap`` into a (C, out_size, out_size) grid."""
    _, height, width = fmap.data.shape
    a_y, a_x = sampling_matrix(roi, height, width, fmap.stride, out_size, sampling_ratio)
    return np.einsum("ph,chw,qw->cpq", a_y, fmap.data, a_x, optimize=True)


def encode_keypoint_target(
    roi: Box,
    landmarks: np.ndarray,
    m: int,
    visible: np.ndarray | None = None,
) -> KeypointTarget:
    """Quantize landmarks (K, 2) into m x m cells of ``roi``; outside or invisible ones are invalid."""
    if m < 2:
        raise ValueError(f"mask size must be >= 2, got {m}")
    pts = np.asarray(landmarks, dtype=np.float64).reshape(-1, 2)
    valid = (
        (pts[:, 0] >= roi.x1) & (pts[:, 0] <= roi.x2)
        & (pts[:, 1] >= roi.y1) & (pts[:, 1] <= roi.y2)
    )
    if visible is not None:
        valid &= np.asarray(visible, dtype=bool)
    cols = np.floor((pts[:, 0] - roi.x1) / roi.width * m)
    rows = np.floor((pts[:, 1] - roi.y1) / roi.height * m)
    indices = np.stack([rows, cols], axis=1)
    indices = np.clip(np.nan_to_num(indices), 0, m - 1).astype(np.int64)
    return KeypointTarget(indices=indices, valid=valid, roi=roi, m=m)


def decode_keypoint_mask(logits: np.ndarray, roi: Box) -> np.ndarray:
    """Arg-max cell of each (m, m) mask mapped to its cell centre in image coordinates."""
    logits = np.asarray(logits)
    k, m, _ = logits.shape
    flat = logits.reshape(k, m * m).argmax(axis=1)  # first maximum in row-major order
    rows, cols = np.divmod(flat, m)
    x = roi.x1 + (cols + 0.5) * roi.width / m
    y = roi.y1 + (rows + 0.5) * roi.height / m
    return np.stack([x, y], axis=1)
