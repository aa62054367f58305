from __future__ import annotations

import numpy as np
import pytest

from steadyskip.flow import SwayCurve
from steadyskip.stereo import (
    StereoPairs,
    SwayExtrema,
    compose_anaglyph,
    compose_side_by_side,
    detect_sway_extrema,
    pair_stereo_frames,
    smooth_curve,
)

from conftest import solid_frame


def _sinusoid(amplitude, period, length, phase=0.0):
    t = np.arange(length)
    return SwayCurve(values=amplitude * np.sin(2 * np.pi * t / period + phase))


class TestSmoothing:
    def test_window_one_is_identity(self, rng):
        curve = SwayCurve(values=rng.normal(size=40))
        out = smooth_curve(curve, 1)
        assert np.array_equal(out.values, curve.values)

    def test_constant_curve_unchanged(self):
        curve = SwayCurve(values=np.full(25, 3.3))
        assert np.allclose(smooth_curve(curve, 5).values, 3.3)

    def test_impulse_spreads_to_thirds(self):
        values = np.zeros(15)
        values[7] = 1.0
        out = smooth_curve(SwayCurve(values=values), 3)
        assert np.allclose(out.values[6:9], 1.0 / 3.0)
        assert np.allclose(out.values[:6], 0.0)
        assert np.allclose(out.values[9:], 0.0)

    def test_boundary_window_shrinks(self):
        values = np.zeros(9)
        values[0] = 1.0
        out = smooth_curve(SwayCurve(values=values), 3)
        assert out.values[0] == pytest.approx(0.5)  # only two samples available

    def test_even_or_oversized_window_rejected(self):
        curve = SwayCurve(values=np.zeros(10))
        with pytest.raises(ValueError, match="odd"):
            smooth_curve(curve, 4)
        with pytest.raises(ValueError, match="exceeds"):
            smooth_curve(curve, 11)


class TestExtremaDetection:
    def test_sinusoid_extrema_near_analytic_positions(self):
        period, amplitude = 30.0, 5.0
        curve = _sinusoid(amplitude, period, 300)
        extrema = detect_sway_extrema(curve, window=5, prominence=2.0)
        for peak in extrema.right_peaks:
            nearest = round((peak - period / 4) / period) * period + period / 4
            assert abs(peak - nearest) <= 1.0
        for valley in extrema.left_peaks:
            nearest = round((valley - 3 * period / 4) / period) * period + 3 * period / 4
            assert abs(valley - nearest) <= 1.0
        assert len(extrema.right_peaks) == 10
        assert len(extrema.left_peaks) in (9, 10)

    def test_monotone_ramp_has_no_extrema(self):
        curve = SwayCurve(values=np.linspace(0, 10, 50))
        extrema = detect_sway_extrema(curve, window=3, prominence=0.1)
        assert extrema.right_peaks == [] and extrema.left_peaks == []

    def test_prominence_threshold_suppresses_small_sway(self):
        curve = _sinusoid(1.0, 30.0, 200)
        extrema = detect_sway_extrema(curve, window=5, prominence=2.0)
        assert extrema.right_peaks == [] and extrema.left_peaks == []

    def test_negated_curve_swaps_polarity(self, rng):
        base = np.cumsum(rng.normal(size=240))
        a = detect_sway_extrema(SwayCurve(values=base), window=5, prominence=0.5)
        b = detect_sway_extrema(SwayCurve(values=-base), window=5, prominence=0.5)
        assert a.right_peaks == b.left_peaks
        assert a.left_peaks == b.right_peaks

    def test_short_curve_rejected(self):
        with pytest.raises(ValueError, match="3 samples"):
            detect_sway_extrema(SwayCurve(values=np.zeros(2)))


class TestPairing:
    def test_worked_alternating_example(self):
        extrema = SwayExtrema(right_peaks=[1, 6, 10], left_peaks=[4, 8, 12],
                              window=5, prominence=1.0)
        pairs = pair_stereo_frames(extrema)
        assert pairs.pairs == [(1, 4), (6, 8), (10, 12)]

    def test_left_before_right_cannot_pair(self):
        extrema = SwayExtrema(right_peaks=[5], left_peaks=[2], window=5, prominence=1.0)
        assert pair_stereo_frames(extrema).pairs == []

    def test_spacing_bound_drops_distant_pairs(self):
        extrema = SwayExtrema(right_peaks=[1, 3], left_peaks=[10], window=5,
                              prominence=1.0)
        # merged spacing {2, 7}: lower median 2, bound 4 -> both candidates too far
        assert pair_stereo_frames(extrema).pairs == []

    def test_missing_polarity_rejected(self):
        extrema = SwayExtrema(right_peaks=[3], left_peaks=[], window=5, prominence=1.0)
        with pytest.raises(ValueError, match="polarity"):
            pair_stereo_frames(extrema)

    def test_pairs_are_order_preserving_and_bounded(self, rng):
        for _ in range(20):
            marks = np.sort(rng.choice(np.arange(400), size=40, replace=False))
            rights = sorted(marks[rng.random(40) < 0.5].tolist())
            lefts = sorted(set(marks.tolist()) - set(rights))
            if not rights or not lefts:
                continue
            extrema = SwayExtrema(right_peaks=rights, left_peaks=lefts,
                                  window=5, prominence=1.0)
            pairs = pair_stereo_frames(extrema).pairs
            assert len(pairs) <= min(len(rights), len(lefts))
            flattened = [f for pair in pairs for f in pair]
            assert flattened == sorted(flattened)
            for right, left in pairs:
                assert right < left


class TestAnaglyph:
    def test_identical_inputs_pass_through(self, rng):
        frame = solid_frame(20, 16, (0, 0, 0))
        frame.data[:] = rng.integers(0, 256, frame.data.shape)
        out = compose_anaglyph(frame, frame)
        assert np.array_equal(out.data, frame.data)

    def test_red_channel_from_left(self):
        left = solid_frame(20, 16, (255, 0, 0))
        right = solid_frame(20, 16, (0, 0, 0))
        out = compose_anaglyph(left, right)
        assert np.all(out.data == np.array([255, 0, 0], dtype=np.uint8))

    def test_cyan_from_right(self):
        left = solid_frame(20, 16, (0, 0, 0))
        right = solid_frame(20, 16, (255, 255, 255))
        out = compose_anaglyph(left, right)
        assert np.all(out.data == np.array([0, 255, 255], dtype=np.uint8))

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal dimensions"):
            compose_anaglyph(solid_frame(20, 16, (0, 0, 0)), solid_frame(16, 16, (0, 0, 0)))

    def test_side_by_side_width_doubles(self):
        left = solid_frame(20, 16, (10, 20, 30))
        right = solid_frame(20, 16, (40, 50, 60))
        out = compose_side_by_side(left, right)
        assert out.data.shape == (16, 40, 3)
        assert np.all(out.data[:, :20] == [10, 20, 30])
        assert np.all(out.data[:, 20:] == [40, 50, 60])
