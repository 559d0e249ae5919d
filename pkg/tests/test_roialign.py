"""Tests for roialign module."""

import math

import numpy as np
import pytest

from maskkit.geometry import Box
from maskkit.roialign import (
    FeatureMap,
    RoIAlignError,
    decode_keypoint_mask,
    encode_keypoint_target,
    roi_align,
)


def bilinear_at(fmap, y, x):
    """Zero-padded 4-neighbour bilinear read at continuous feature coordinates."""
    _, h, w = fmap.shape
    y, x = y - 0.5, x - 0.5
    y0, x0 = math.floor(y), math.floor(x)
    value = np.zeros(fmap.shape[0])
    for yy, wy in ((y0, 1 - (y - y0)), (y0 + 1, y - y0)):
        for xx, wx in ((x0, 1 - (x - x0)), (x0 + 1, x - x0)):
            if 0 <= yy < h and 0 <= xx < w:
                value += wy * wx * fmap[:, yy, xx]
    return value


def brute_force_align(fmap, roi, stride, out_size, sampling_ratio=2):
    x1, y1 = roi.x1 / stride, roi.y1 / stride
    bw, bh = roi.width / stride / out_size, roi.height / stride / out_size
    out = np.zeros((fmap.shape[0], out_size, out_size))
    for p in range(out_size):
        for q in range(out_size):
            acc = np.zeros(fmap.shape[0])
            for i in range(sampling_ratio):
                for j in range(sampling_ratio):
                    y = y1 + (p + (i + 0.5) / sampling_ratio) * bh
                    x = x1 + (q + (j + 0.5) / sampling_ratio) * bw
                    acc += bilinear_at(fmap, y, x)
            out[:, p, q] = acc / sampling_ratio**2
    return out


class TestRoIAlign:
    """Tests for roi_align."""

    def test_constant_map(self):
        fmap = FeatureMap(np.full((2, 8, 8), 3.0), stride=4)
        out = roi_align(fmap, Box(4.0, 6.0, 24.0, 26.0), out_size=4)
        assert out.shape == (2, 4, 4)
        assert np.allclose(out, 3.0, atol=1e-12)

    def test_linear_ramp_gives_bin_centres(self):
        cols = np.arange(16) + 0.5
        fmap = FeatureMap(np.broadcast_to(cols, (1, 16, 16)).copy(), stride=4)
        roi = Box(9.2, 6.8, 36.4, 33.6)
        out = roi_align(fmap, roi, out_size=7)
        centres = (roi.x1 + (np.arange(7) + 0.5) * roi.width / 7) / 4
        assert np.allclose(out[0], centres[None, :], atol=1e-9)

    def test_matches_brute_force(self, rng):
        data = rng.normal(size=(3, 16, 16))
        for stride in (4, 8, 16, 32, 64):
            fmap = FeatureMap(data, stride=stride)
            for _ in range(100):
                x1, y1 = rng.uniform(-4, 14 * stride, size=2)
                roi = Box(x1, y1, x1 + rng.uniform(0.5, 10 * stride), y1 + rng.uniform(0.5, 10 * stride))
                expected = brute_force_align(data, roi, stride, 5)
                assert np.allclose(roi_align(fmap, roi, out_size=5), expected, atol=1e-6)

    def test_linear_in_features(self, rng):
        f, g = rng.normal(size=(2, 2, 10, 10))
        roi = Box(3.0, 2.0, 27.0, 31.0)
        a, b = 1.7, -0.4
        lhs = roi_align(FeatureMap(a * f + b * g, 4), roi)
        rhs = a * roi_align(FeatureMap(f, 4), roi) + b * roi_align(FeatureMap(g, 4), roi)
        assert np.allclose(lhs, rhs, atol=1e-12)

    def test_continuous_in_roi(self, rng):
        fmap = FeatureMap(rng.normal(size=(1, 12, 12)), stride=4)
        roi = Box(8.0, 8.0, 36.0, 38.0)
        shifted = Box(8.004, 8.0, 36.004, 38.0)
        delta = np.abs(roi_align(fmap, roi) - roi_align(fmap, shifted)).max()
        assert delta < 1e-3 * 2 * np.abs(fmap.data).max() * 2

    def test_degenerate_roi(self):
        fmap = FeatureMap(np.zeros((1, 4, 4)), stride=4)
        with pytest.raises(RoIAlignError, match="degenerate"):
            roi_align(fmap, Box(0.0, 0.0, 1e-6, 1.0))

    def test_bad_feature_map(self):
        with pytest.raises(ValueError, match="stride"):
            FeatureMap(np.zeros((1, 4, 4)), stride=3)
        with pytest.raises(ValueError, match="stride"):
            FeatureMap(np.zeros((1, 4, 4)), stride=2)
        with pytest.raises(ValueError, match="C, H, W"):
            FeatureMap(np.zeros((4, 4)), stride=4)


class TestKeypointTargets:
    """Tests for encode_keypoint_target and decode_keypoint_mask."""

    def test_encode_example(self):
        t = encode_keypoint_target(Box(0, 0, 56, 56), np.array([[10.0, 10.0]]), 56)
        assert t.indices.tolist() == [[10, 10]]
        assert t.valid.tolist() == [True]

    def test_encode_corner(self):
        roi = Box(12.0, 30.0, 40.0, 60.0)
        t = encode_keypoint_target(roi, np.array([[roi.x1, roi.y1], [roi.x2, roi.y2]]), 56)
        assert t.indices.tolist() == [[0, 0], [55, 55]]
        assert t.valid.all()

    def test_encode_outside_and_invisible(self):
        t = encode_keypoint_target(
            Box(0, 0, 56, 56),
            np.array([[70.0, 10.0], [5.0, 5.0], [6.0, 6.0]]),
            56,
            visible=np.array([True, False, True]),
        )
        assert t.valid.tolist() == [False, False, True]

    def test_encode_rejects_small_mask(self):
        with pytest.raises(ValueError, match="mask size"):
            encode_keypoint_target(Box(0, 0, 1, 1), np.zeros((1, 2)), 1)

    def test_decode_one_hot(self):
        logits = np.zeros((1, 56, 56))
        logits[0, 28, 28] = 1.0
        assert decode_keypoint_mask(logits, Box(0, 0, 56, 56)).tolist() == [[28.5, 28.5]]

    def test_decode_uniform_ties_to_first_cell(self):
        pts = decode_keypoint_mask(np.zeros((2, 8, 8)), Box(0, 0, 16, 16))
        assert pts.tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_round_trip_within_half_cell(self, rng):
        roi = Box(13.0, 7.0, 93.0, 67.0)
        m = 56
        for _ in range(200):
            point = np.array([[rng.uniform(roi.x1, roi.x2), rng.uniform(roi.y1, roi.y2)]])
            t = encode_keypoint_target(roi, point, m)
            logits = np.zeros((1, m, m))
            logits[0, t.indices[0, 0], t.indices[0, 1]] = 1.0
            back = decode_keypoint_mask(logits, roi)
            assert abs(back[0, 0] - point[0, 0]) <= roi.width / (2 * m) + 1e-9
            assert abs(back[0, 1] - point[0, 1]) <= roi.height / (2 * m) + 1e-9
