from __future__ import annotations

import numpy as np
import pytest

from steadyskip.costgraph import SamplePlan
from steadyskip.epipolar import MotionDirection
from steadyskip.metrics import (
    epipole_jitter,
    jitter_improvement,
    lower_median,
    median_skip,
    uniform_plan,
)


def _plan(frames):
    return SamplePlan(frames=list(frames), total_cost=None, transitions=[], config=None)


def _directions(points, sources=None):
    sources = sources or ["epipole"] * len(points)
    return [
        MotionDirection(point=p, source=s, span=(i, i + 1))
        for i, (p, s) in enumerate(zip(points, sources))
    ]


class TestUniformPlan:
    def test_factor_three(self):
        assert uniform_plan(10, 3).frames == [0, 3, 6, 9]

    def test_factor_one_selects_everything(self):
        assert uniform_plan(5, 1).frames == [0, 1, 2, 3, 4]

    def test_long_sequence_count(self):
        assert len(uniform_plan(17249, 10).frames) == 1725

    def test_bad_factor(self):
        with pytest.raises(ValueError):
            uniform_plan(10, 0)


class TestMedianSkip:
    def test_even_spacing(self):
        assert median_skip(_plan([0, 10, 20, 30])) == 10

    def test_even_count_takes_lower_middle(self):
        assert median_skip(_plan([0, 1, 100])) == 1

    def test_uniform_plan_median_equals_factor(self):
        for factor in (1, 3, 7):
            assert median_skip(uniform_plan(100, factor)) == factor

    def test_needs_two_frames(self):
        with pytest.raises(ValueError):
            median_skip(_plan([4]))

    def test_lower_median_helper(self):
        assert lower_median([2, 7]) == 2
        assert lower_median([5]) == 5
        assert lower_median([3, 1, 2]) == 2


class TestJitter:
    def test_constant_directions_have_zero_jitter(self):
        plan = _plan([0, 5, 10, 15])
        result = epipole_jitter(plan, _directions([(0.0, 0.0)] * 3))
        assert result.value == 0.0
        assert result.unavailable_transitions == 0

    def test_alternating_offsets(self):
        plan = _plan([0, 5, 10, 15, 20])
        points = [(-10.0, 0.0), (10.0, 0.0), (-10.0, 0.0), (10.0, 0.0)]
        result = epipole_jitter(plan, _directions(points))
        assert result.value == pytest.approx(20.0)
        assert result.derivative_count == 3

    def test_offset_invariance(self, rng):
        plan = _plan(range(0, 40, 5))
        points = [tuple(p) for p in rng.normal(size=(7, 2))]
        shifted = [(x + 55.0, y - 13.0) for x, y in points]
        a = epipole_jitter(plan, _directions(points))
        b = epipole_jitter(plan, _directions(shifted))
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_unavailable_transitions_excluded_and_counted(self):
        plan = _plan([0, 5, 10, 15, 20])
        directions = _directions(
            [(0.0, 0.0), None, (6.0, 8.0), (6.0, 8.0)],
            sources=["epipole", "unavailable", "foe", "epipole"],
        )
        result = epipole_jitter(plan, directions)
        assert result.unavailable_transitions == 1
        assert result.value == pytest.approx((10.0 + 0.0) / 2)

    def test_too_few_directions_rejected(self):
        plan = _plan([0, 5, 10])
        with pytest.raises(ValueError, match="available"):
            epipole_jitter(
                plan,
                _directions([None, None], sources=["unavailable", "unavailable"]),
            )
        with pytest.raises(ValueError, match="3 selected"):
            epipole_jitter(_plan([0, 5]), _directions([(0.0, 0.0)]))


class TestImprovement:
    def test_published_scale_walking_case(self):
        assert jitter_improvement(10.0, 38.3) == pytest.approx(283.0)

    def test_equal_jitter_is_zero(self):
        assert jitter_improvement(7.7, 7.7) == 0.0

    def test_worse_than_baseline_is_negative(self):
        assert jitter_improvement(20.0, 18.6) == pytest.approx(-7.0)

    def test_zero_baseline_rejected(self):
        with pytest.raises(ValueError, match="baseline"):
            jitter_improvement(5.0, 0.0)
