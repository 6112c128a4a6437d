import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nbsa import metrics as M
from nbsa import oracles
from nbsa.errors import DimensionError, UndefinedMetricError


def pair(draw_shape=(8, 8)):
    return st.tuples(arrays(np.bool_, draw_shape), arrays(np.bool_, draw_shape))


def square(H, W, r0, c0, n):
    m = np.zeros((H, W), dtype=bool)
    m[r0 : r0 + n, c0 : c0 + n] = True
    return m


class TestDice:
    def test_identical(self):
        a = square(6, 6, 1, 1, 3)
        assert M.dsc(a, a) == 1.0

    def test_disjoint(self):
        assert M.dsc(square(6, 6, 0, 0, 2), square(6, 6, 3, 3, 2)) == 0.0

    def test_half_overlap(self):
        a = np.zeros((1, 6), dtype=bool)
        b = np.zeros((1, 6), dtype=bool)
        a[0, :4] = True
        b[0, 2:6] = True
        assert M.dsc(a, b) == 0.5

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            M.dsc(np.zeros((2, 2)), np.zeros((3, 3)))

    @settings(max_examples=50, deadline=None)
    @given(pair())
    def test_symmetric(self, ab):
        a, b = ab
        assert M.dsc(a, b) == M.dsc(b, a)


class TestSurface:
    def test_square_surface_is_ring(self):
        s = M.surface(square(5, 5, 1, 1, 3))
        expected = square(5, 5, 1, 1, 3)
        expected[2, 2] = False
        np.testing.assert_array_equal(s, expected)

    def test_border_counts_as_background(self):
        assert M.surface(np.ones((3, 3), dtype=bool)).sum() == 8


class TestHd95:
    def test_identical_is_zero(self):
        a = square(6, 6, 1, 1, 3)
        assert M.hd95(a, a) == 0.0

    def test_single_pixels(self):
        a, b = np.zeros((8, 8), dtype=bool), np.zeros((8, 8), dtype=bool)
        a[1, 1] = True
        b[4, 5] = True
        assert M.hd95(a, b) == 5.0

    def test_shifted_square_matches_exhaustive(self):
        a, b = square(7, 7, 1, 1, 3), square(7, 7, 2, 1, 3)
        assert M.hd95(a, b) == pytest.approx(oracles.hd95(a, b), abs=1e-12)

    def test_spacing_scales(self):
        a, b = square(7, 7, 1, 1, 3), square(7, 7, 3, 1, 3)
        assert M.hd95(a, b, spacing=2.5) == pytest.approx(2.5 * M.hd95(a, b))

    def test_empty_undefined(self):
        with pytest.raises(UndefinedMetricError):
            M.hd95(np.zeros((3, 3), dtype=bool), square(3, 3, 0, 0, 1))

    @settings(max_examples=50, deadline=None)
    @given(pair())
    def test_symmetric_nonnegative(self, ab):
        a, b = ab
        if not a.any() or not b.any():
            return
        h = M.hd95(a, b)
        assert h == M.hd95(b, a) and h >= 0 and M.hd95(a, a) == 0


class TestSurfaceDice:
    def test_identical_tau_zero(self):
        a = square(6, 6, 1, 1, 3)
        assert M.surface_dsc(a, a, tau=0) == 1.0

    def test_saturates(self):
        a, b = square(9, 9, 0, 0, 2), square(9, 9, 6, 6, 3)
        assert M.surface_dsc(a, b, tau=9 * math.sqrt(2)) == 1.0

    def test_shifted_square_matches_exhaustive(self):
        a, b = square(7, 7, 1, 1, 3), square(7, 7, 2, 1, 3)
        assert M.surface_dsc(a, b, tau=1) == oracles.surface_dsc(a, b, 1)

    @settings(max_examples=40, deadline=None)
    @given(pair(), st.floats(0, 5), st.floats(0, 5))
    def test_monotone_in_tau(self, ab, t1, t2):
        a, b = ab
        if not a.any() or not b.any():
            return
        lo, hi = sorted((t1, t2))
        assert M.surface_dsc(a, b, tau=lo) <= M.surface_dsc(a, b, tau=hi)


class TestPathLength:
    def test_identical(self):
        a = square(6, 6, 1, 1, 4)
        assert M.apl_tpl_car(a, a) == (0, 12, 0.0)

    def test_empty_prediction(self):
        a = square(6, 6, 1, 1, 3)
        apl, tpl, car = M.apl_tpl_car(a, np.zeros_like(a))
        assert apl == tpl == 8 and car == 1.0

    def test_missing_corner_hand_enumeration(self):
        ref = square(5, 5, 1, 1, 3)
        pred = ref.copy()
        pred[1, 1] = False
        # ref surface: the 8 ring pixels; pred surface: the ring minus (1,1),
        # the centre keeps all four neighbours so it stays interior
        ref_s = {(1, 1), (1, 2), (1, 3), (2, 1), (2, 3), (3, 1), (3, 2), (3, 3)}
        pred_s = ref_s - {(1, 1)}
        assert len(ref_s ^ pred_s) == 1
        assert M.apl_tpl_car(ref, pred) == (1, 8, 0.125)

    def test_empty_reference_undefined(self):
        with pytest.raises(UndefinedMetricError):
            M.apl_tpl_car(np.zeros((3, 3), dtype=bool), square(3, 3, 0, 0, 2))

    def test_complement_is_finite(self):
        a = square(6, 6, 1, 1, 3)
        assert math.isfinite(M.apl_tpl_car(a, ~a)[2])


class TestOraclesOnRandomMasks:
    @settings(max_examples=60, deadline=None)
    @given(pair((7, 7)), st.sampled_from([0.0, 1.0, 1.5, 2.0]))
    def test_all_metrics_match_exhaustive(self, ab, tau):
        a, b = ab
        assert M.dsc(a, b) == oracles.dsc(a, b)
        if not a.any() or not b.any():
            return
        assert M.surface_dsc(a, b, tau=tau) == oracles.surface_dsc(a, b, tau)
        assert M.hd95(a, b) == pytest.approx(oracles.hd95(a, b), abs=1e-9)
        assert M.apl_tpl_car(a, b)[:2] == oracles.apl_tpl(a, b)

    def test_nearest_rank(self):
        assert M.nearest_rank(np.arange(1.0, 21.0), 95) == 19.0
        assert M.nearest_rank(np.array([3.0]), 95) == 3.0


class TestDvh:
    def test_uniform_dose(self):
        curve = M.dvh(np.full((3, 3), 12.0), np.ones((3, 3), dtype=bool), bin_width=1.0)
        expected = (curve.dose_edges <= 12.0).astype(float)
        np.testing.assert_array_equal(curve.cumulative_fraction, expected)
        assert curve.cumulative_fraction[0] == 1.0

    def test_ramp_matches_counting(self):
        dose = np.arange(10, dtype=float)[None, :] * 2.5
        mask = np.ones_like(dose, dtype=bool)
        curve = M.dvh(dose, mask, bin_width=2.0)
        counted = [sum(v >= e for v in dose.ravel()) / dose.size for e in curve.dose_edges]
        np.testing.assert_array_equal(curve.cumulative_fraction, counted)
        assert curve.dose_edges[-1] > dose.max()

    def test_empty_structure(self):
        with pytest.raises(UndefinedMetricError):
            M.dvh(np.ones((2, 2)), np.zeros((2, 2), dtype=bool))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_monotone_from_one(self, seed):
        rng = np.random.default_rng(seed)
        dose = rng.uniform(0, 80, size=(6, 6))
        mask = rng.random((6, 6)) < 0.5
        mask[0, 0] = True
        f = M.dvh(dose, mask, bin_width=float(rng.uniform(0.5, 5))).cumulative_fraction
        assert f[0] == 1.0 and np.all(np.diff(f) <= 0) and f[-1] == 0.0


class TestDoseMetrics:
    def test_identical(self):
        d = np.random.default_rng(0).uniform(0, 70, (4, 4))
        m = square(4, 4, 0, 0, 2)
        assert M.dose_metrics(d, m, m) == (0.0, 0.0, 0.0, 0.0)

    def test_uniform_dose(self):
        d = np.full((4, 4), 33.0)
        assert M.dose_metrics(d, square(4, 4, 0, 0, 2), square(4, 4, 1, 1, 3)) == (0.0, 0.0, 0.0, 0.0)

    def test_hand_2x2(self):
        d = np.array([[10.0, 20.0], [30.0, 40.0]])
        mm = np.array([[True, True], [False, False]])  # doses 10, 20
        ma = np.array([[False, True], [True, True]])  # doses 20, 30, 40
        mean_add, max_add, dv5, dv30 = M.dose_metrics(d, mm, ma, x_levels=(5, 30))
        assert mean_add == 15.0  # |15 - 30|
        assert max_add == 20.0  # |20 - 40|
        assert dv5 == 0.0  # both 100%
        assert dv30 == pytest.approx(200.0 / 3.0)  # |0 - 66.67|

    def test_vx(self):
        d = np.array([[10.0, 20.0], [30.0, 40.0]])
        assert M.v_x(d, np.ones((2, 2), dtype=bool), 25) == 50.0


class TestSpearman:
    def test_increasing(self):
        assert M.spearman([1, 2, 5, 9], [0.1, 0.4, 0.5, 3.0]) == pytest.approx(1.0)

    def test_reversed(self):
        assert M.spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_mid_rank_table(self):
        # ranks x: 1, 2.5, 2.5, 4 ; ranks y: 1, 3, 2, 4
        rx = np.array([1, 2.5, 2.5, 4]) - 2.5
        ry = np.array([1, 3, 2, 4]) - 2.5
        expected = (rx @ ry) / math.sqrt((rx @ rx) * (ry @ ry))
        assert expected == pytest.approx(3 / math.sqrt(10))
        assert M.spearman([1, 2, 2, 4], [1, 3, 2, 4]) == pytest.approx(expected, abs=1e-15)

    def test_constant_undefined(self):
        with pytest.raises(UndefinedMetricError):
            M.spearman([1, 1, 1], [1, 2, 3])
