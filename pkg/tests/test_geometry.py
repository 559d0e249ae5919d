"""Tests for geometry module."""

import math

import numpy as np
import pytest

from maskkit.geometry import (
    DELTA_CLAMP,
    Box,
    BoxDelta,
    anchor_count,
    assign_level,
    decode_deltas,
    decode_deltas_array,
    encode_deltas,
    encode_deltas_array,
    generate_anchors,
    iou,
    iou_matrix,
)
from maskkit.models import AnchorConfig

GRID = 60  # raster cells per side, 0.1 px each


def raster_iou(a, b):
    """Pixel-count IoU of boxes whose corners lie on the 0.1 px lattice."""
    def mask(box):
        m = np.zeros((GRID, GRID), dtype=bool)
        m[box[1]:box[3], box[0]:box[2]] = True
        return m

    ma, mb = mask(a), mask(b)
    return (ma & mb).sum() / (ma | mb).sum()


def random_lattice_box(rng):
    x1, y1 = rng.integers(0, GRID - 1, size=2)
    x2 = rng.integers(x1 + 1, GRID + 1)
    y2 = rng.integers(y1 + 1, GRID + 1)
    return int(x1), int(y1), int(x2), int(y2)


class TestBox:
    """Tests for Box."""

    def test_properties(self):
        box = Box(2.0, 4.0, 12.0, 9.0)
        assert box.width == 10.0
        assert box.height == 5.0
        assert box.area == 50.0
        assert box.center == (7.0, 6.5)

    def test_from_center(self):
        assert Box.from_center(10, 10, 20, 20) == Box(0, 0, 20, 20)

    def test_degenerate_rejected(self):
        with pytest.raises(ValueError, match="Degenerate"):
            Box(5.0, 0.0, 5.0, 10.0)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="finite"):
            Box(0.0, 0.0, math.inf, 1.0)


class TestIoU:
    """Tests for iou and iou_matrix."""

    def test_identity(self):
        a = Box(0, 0, 10, 10)
        assert iou(a, a) == 1.0

    def test_half_overlap(self):
        assert iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3)

    def test_disjoint(self):
        assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0

    def test_touching_edges(self):
        assert iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0

    def test_matches_raster_oracle(self, rng):
        for _ in range(10_000):
            a, b = random_lattice_box(rng), random_lattice_box(rng)
            box_a = Box(*(v / 10 for v in a))
            box_b = Box(*(v / 10 for v in b))
            expected = raster_iou(a, b)
            assert iou(box_a, box_b) == pytest.approx(expected, abs=1e-6)
            assert iou(box_b, box_a) == pytest.approx(iou(box_a, box_b), abs=1e-15)

    def test_symmetric_and_bounded(self, rng):
        """Test IoU(a, b) == IoU(b, a) and 0 <= IoU <= 1 on continuous boxes."""
        a = [Box.from_center(*rng.uniform(0, 50, 2), *rng.uniform(0.5, 30, 2)) for _ in range(200)]
        b = [Box.from_center(*rng.uniform(0, 50, 2), *rng.uniform(0.5, 30, 2)) for _ in range(150)]
        forward, backward = iou_matrix(a, b), iou_matrix(b, a)
        assert np.array_equal(forward, backward.T)
        assert np.all((forward >= 0) & (forward <= 1))
        assert iou(a[0], b[0]) == iou(b[0], a[0])

    def test_matrix_agrees_with_scalar(self, rng):
        boxes = [Box(*(v / 10 for v in random_lattice_box(rng))) for _ in range(12)]
        matrix = iou_matrix(boxes, boxes)
        assert matrix.shape == (12, 12)
        for i, a in enumerate(boxes):
            for j, b in enumerate(boxes):
                assert matrix[i, j] == pytest.approx(iou(a, b), abs=1e-12)
        assert np.all((matrix >= 0) & (matrix <= 1))


class TestDeltas:
    """Tests for encode_deltas and decode_deltas."""

    def test_encode_example(self):
        anchor = Box.from_center(10, 10, 20, 20)
        gt = Box.from_center(12, 10, 20, 20)
        d = encode_deltas(anchor, gt)
        assert d.dx == pytest.approx(0.1)
        assert (d.dy, d.dw, d.dh) == (0.0, 0.0, 0.0)

    def test_encode_identity(self):
        anchor = Box(3, 4, 30, 17)
        assert encode_deltas(anchor, anchor) == BoxDelta(0.0, 0.0, 0.0, 0.0)

    def test_decode_zero(self):
        decoded = decode_deltas(Box(0, 0, 20, 20), BoxDelta(0, 0, 0, 0))
        assert decoded.box == Box(0, 0, 20, 20)
        assert not decoded.clamped

    def test_decode_example(self):
        decoded = decode_deltas(Box.from_center(10, 10, 20, 20), BoxDelta(0.1, 0, 0, 0))
        assert decoded.box.center == pytest.approx((12.0, 10.0))
        assert decoded.box.width == pytest.approx(20.0)

    def test_round_trip(self, rng):
        for _ in range(10_000):
            anchor = Box.from_center(*rng.uniform(0, 500, 2), *rng.uniform(8, 400, 2))
            gt = Box.from_center(*rng.uniform(0, 500, 2), *rng.uniform(8, 400, 2))
            back = decode_deltas(anchor, encode_deltas(anchor, gt)).box
            assert back.as_array() == pytest.approx(gt.as_array(), abs=1e-9)

    def test_clamp_flagged(self):
        decoded = decode_deltas(Box(0, 0, 20, 20), BoxDelta(0, 0, 10.0, 0))
        assert decoded.clamped
        assert decoded.box.width == pytest.approx(20 * math.exp(DELTA_CLAMP))

    def test_array_forms_agree(self, rng):
        anchors = np.array([Box.from_center(*rng.uniform(0, 99, 2), *rng.uniform(8, 90, 2)).as_array() for _ in range(20)])
        gts = np.array([Box.from_center(*rng.uniform(0, 99, 2), *rng.uniform(8, 90, 2)).as_array() for _ in range(20)])
        deltas = encode_deltas_array(anchors, gts)
        for i in range(20):
            assert np.allclose(deltas[i], tuple(encode_deltas(Box(*anchors[i]), Box(*gts[i]))), rtol=0, atol=1e-12)
        boxes, clamped = decode_deltas_array(anchors, deltas)
        assert boxes == pytest.approx(gts, abs=1e-9)
        assert not clamped.any()


class TestAnchors:
    """Tests for generate_anchors and anchor_count."""

    def test_count_at_640(self):
        cfg = AnchorConfig()
        grid = generate_anchors(cfg, 640, 640)
        assert len(grid) == 102_300
        assert anchor_count(cfg, 640, 640) == 3 * (160**2 + 80**2 + 40**2 + 20**2 + 10**2)

    def test_side_range(self):
        grid = generate_anchors(AnchorConfig(), 640, 640)
        sides = grid.boxes[:, 2] - grid.boxes[:, 0]
        assert sides.min() == pytest.approx(16.0)
        assert sides.max() == pytest.approx(256 * 2 ** (2 / 3))
        assert abs(sides.max() - 406) < 0.5

    def test_count_formula_random_sizes(self, rng):
        cfg = AnchorConfig()
        for _ in range(20):
            w, h = (int(v) for v in rng.integers(16, 400, size=2))
            assert len(generate_anchors(cfg, w, h)) == anchor_count(cfg, w, h)

    def test_translation_between_cells(self):
        grid = generate_anchors(AnchorConfig(), 64, 64)
        first, right = grid.boxes[0], grid.boxes[3]
        assert tuple(grid.cells[3]) == (0, 1)
        assert np.allclose(right - first, [4.0, 0.0, 4.0, 0.0])

    def test_levels_and_slices(self):
        grid = generate_anchors(AnchorConfig(), 160, 160)
        assert grid.level_shapes == ((40, 40), (20, 20), (10, 10), (5, 5), (3, 3))
        level3 = grid.level_slice(3)
        assert level3.stop - level3.start == 20 * 20 * 3
        assert set(grid.levels[level3]) == {3}

    def test_first_anchor_centred_on_half_stride(self):
        grid = generate_anchors(AnchorConfig(), 64, 64)
        assert grid.box(0).center == pytest.approx((2.0, 2.0))


class TestAssignLevel:
    """Tests for assign_level."""

    @pytest.mark.parametrize(
        "side,expected",
        [(112, 3), (224, 4), (50, 2), (111.9, 2), (2000, 6)],
    )
    def test_k0_4(self, side, expected):
        assert assign_level(Box(0, 0, side, side), k0=4) == expected

    def test_monotone_in_area(self):
        sides = np.geomspace(4, 4000, 200)
        for k0 in (2, 3, 4, 5):
            levels = [assign_level(Box(0, 0, s, s), k0) for s in sides]
            assert levels == sorted(levels)

    def test_lower_k0_never_raises_level(self):
        for side in np.geomspace(4, 4000, 50):
            roi = Box(0, 0, side, side * 0.7)
            assert assign_level(roi, 3) <= assign_level(roi, 4)
