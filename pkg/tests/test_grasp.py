"""Wrist roll selection and grasp verification."""

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from segservo.errors import EmptyMaskError, InvalidBaselineError
from segservo.grasp import (
    DEFAULT_GRID_STEP,
    GripperTemplate,
    grasp_standoff,
    grasp_succeeded,
    roll_grid,
    select_wrist_roll,
    template_for_depth,
)
from segservo.masks import BinaryMask, area, jaccard


def ellipse_mask(width, height, cx, cy, a, b, theta):
    ys, xs = np.ogrid[0:height, 0:width]
    dx = xs - cx
    dy = ys - cy
    u = dx * math.cos(theta) + dy * math.sin(theta)
    v = -dx * math.sin(theta) + dy * math.cos(theta)
    return BinaryMask((u * u) / (a * a) + (v * v) / (b * b) <= 1.0)


class TestGripperTemplate:
    def test_validation(self):
        with pytest.raises(ValueError):
            GripperTemplate((10.0, 10.0), 0.0, 5.0, 1.0)
        with pytest.raises(ValueError):
            GripperTemplate((10.0, 10.0), 5.0, -1.0, 1.0)
        with pytest.raises(ValueError):
            GripperTemplate((10.0, 10.0), 5.0, 5.0, 0.0)

    def test_roll_zero_geometry(self):
        t = GripperTemplate(center=(20.0, 15.0), separation=8.0, finger_length=10.0, finger_width=2.0)
        m = t.mask(0.0, 40, 30)
        # fingers run along x in [15, 25]; rows with |"y-15"| in [3, 5]
        assert m.pixels[11, 20]
        assert m.pixels[19, 20]
        assert not m.pixels[15, 20]  # gap between the fingers
        assert not m.pixels[11, 28]  # beyond the finger tips
        ys, xs = np.nonzero(m.pixels)
        assert xs.min() == 15 and xs.max() == 25
        assert set(ys) == {10, 11, 12, 18, 19, 20}

    def test_quarter_turn_swaps_axes(self):
        t = GripperTemplate(center=(20.0, 15.0), separation=8.0, finger_length=10.0, finger_width=2.0)
        m = t.mask(math.pi / 2.0, 40, 30)
        ys, xs = np.nonzero(m.pixels)
        assert ys.min() == 10 and ys.max() == 20
        assert set(xs) == {15, 16, 17, 23, 24, 25}

    def test_half_turn_symmetry(self):
        t = GripperTemplate(center=(20.3, 15.2), separation=8.1, finger_length=10.3, finger_width=2.2)
        assert t.mask(0.0, 40, 30) == t.mask(math.pi, 40, 30)

    def test_template_for_depth_scales(self):
        t = template_for_depth(
            focal=100.0,
            depth=0.5,
            center=(32.0, 24.0),
            separation_m=0.04,
            finger_length_m=0.03,
            finger_width_m=0.008,
        )
        assert t.separation == pytest.approx(8.0)
        assert t.finger_length == pytest.approx(6.0)
        assert t.finger_width == pytest.approx(1.6)

    def test_template_for_depth_rejects_bad_depth(self):
        with pytest.raises(ValueError):
            template_for_depth(100.0, 0.0, (0.0, 0.0), 0.04, 0.03, 0.008)


class TestRollGrid:
    def test_default_grid(self):
        g = roll_grid()
        assert len(g) == 36
        assert g[0] == 0.0
        assert g[-1] == pytest.approx(35.0 * math.pi / 36.0)
        assert (g < math.pi).all()
        np.testing.assert_allclose(np.diff(g), DEFAULT_GRID_STEP)

    def test_coarse_grid(self):
        g = roll_grid(math.pi / 4.0)
        np.testing.assert_allclose(g, [0.0, math.pi / 4, math.pi / 2, 3 * math.pi / 4])

    def test_step_larger_than_range(self):
        np.testing.assert_allclose(roll_grid(4.0), [0.0])

    def test_rejects_bad_step(self):
        with pytest.raises(ValueError):
            roll_grid(0.0)


class TestSelectWristRoll:
    TEMPLATE = GripperTemplate(center=(32.0, 24.0), separation=18.0, finger_length=26.0, finger_width=4.0)

    def test_elongated_object_prefers_parallel_fingers(self):
        # ellipse stretched along x: fingers above and below overlap least
        obj = ellipse_mask(64, 48, 32.0, 24.0, 15.0, 4.0, 0.0)
        search = select_wrist_roll(obj, self.TEMPLATE)
        assert search.best_roll == 0.0
        perpendicular = int(round((math.pi / 2.0) / DEFAULT_GRID_STEP))
        assert search.scores[perpendicular] > search.best_score

    def test_rotated_object_clears_fingers_at_its_angle(self):
        # thin ellipse rotated onto a grid angle: the separation clears it
        # over a plateau of angles around theta; the winner is the first
        # zero-score angle in grid order
        theta = 8.0 * DEFAULT_GRID_STEP
        obj = ellipse_mask(64, 48, 32.0, 24.0, 15.0, 4.0, theta)
        search = select_wrist_roll(obj, self.TEMPLATE)
        assert search.scores[8] == 0.0
        assert search.best_score == 0.0
        zero_indices = np.nonzero(search.scores == 0.0)[0]
        assert search.best_index == zero_indices[0]
        assert 8 in zero_indices

    def test_all_tied_scores_keep_first_angle(self):
        px = np.zeros((48, 64), dtype=bool)
        px[2, 2] = True  # far from every template placement
        search = select_wrist_roll(BinaryMask(px), self.TEMPLATE)
        assert (search.scores == 0.0).all()
        assert search.best_index == 0
        assert search.best_roll == 0.0

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            select_wrist_roll(BinaryMask(np.zeros((48, 64), dtype=bool)), self.TEMPLATE)

    def test_scores_are_jaccard_values(self):
        obj = ellipse_mask(64, 48, 30.0, 22.0, 12.0, 6.0, 0.4)
        search = select_wrist_roll(obj, self.TEMPLATE)
        for i in (0, 9, 17, 35):
            ref = jaccard(obj, self.TEMPLATE.mask(float(search.angles[i]), 64, 48))
            assert search.scores[i] == ref

    @given(st.integers(0, 2**31 - 1))
    def test_matches_first_min_oracle(self, seed):
        r = np.random.default_rng(seed)
        px = r.random((48, 64)) < 0.2
        if not px.any():
            return
        obj = BinaryMask(px)
        search = select_wrist_roll(obj, self.TEMPLATE, step=math.pi / 12.0)
        best_i = None
        best_s = None
        for i, ang in enumerate(roll_grid(math.pi / 12.0)):
            s = jaccard(obj, self.TEMPLATE.mask(float(ang), 64, 48))
            if best_s is None or s < best_s:
                best_s = s
                best_i = i
        assert search.best_index == best_i
        assert search.best_score == best_s


class TestGraspChecks:
    def test_standoff(self):
        assert grasp_standoff(0.09, 0.155) == pytest.approx(0.245)

    def test_strictly_more_than_half(self):
        assert not grasp_succeeded(400, 1000)
        assert not grasp_succeeded(500, 1000)
        assert grasp_succeeded(501, 1000)
        assert grasp_succeeded(600, 1000)

    def test_bad_baseline_raises(self):
        with pytest.raises(InvalidBaselineError):
            grasp_succeeded(100, 0)
        with pytest.raises(InvalidBaselineError):
            grasp_succeeded(100, -10)

    def test_area_preserving_lift_passes(self):
        obj = ellipse_mask(64, 48, 32.0, 24.0, 10.0, 6.0, 0.0)
        assert grasp_succeeded(area(obj), area(obj))
