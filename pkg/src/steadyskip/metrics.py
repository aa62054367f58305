"""Plan quality measures: effective speedup and motion-direction jitter.

The effective speedup of a plan is the median gap between selected frame
indices (the input/output frame ratio is misleading when large skips are
taken over slow segments).  Stability is the mean magnitude of the
temporal derivative of the motion-direction points along the output, and
is compared against the uniform-sampling baseline.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from steadyskip.costgraph import SamplePlan
from steadyskip.epipolar import SOURCE_UNAVAILABLE, MotionDirection

METRICS_FIELDS = [
    "sequence_id",
    "mode",
    "order",
    "input_frames",
    "output_frames",
    "median_skip",
    "jitter",
    "baseline_jitter",
    "improvement_pct",
    "unavailable_transition_count",
]


@dataclass
class JitterResult:
    value: float
    derivative_count: int
    unavailable_transitions: int


@dataclass
class PlanMetrics:
    input_frames: int
    output_frames: int
    median_skip: float
    jitter: float
    baseline_jitter: float
    improvement_pct: float
    unavailable_transitions: int


def lower_median(values: Sequence[float]) -> float:
    """Median taking the lower middle element for even counts."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("median of empty sequence")
    return ordered[(len(ordered) - 1) // 2]


def uniform_plan(n: int, factor: int) -> SamplePlan:
    """Baseline plan sampling every ``factor``-th frame starting at 0."""
    if factor < 1:
        raise ValueError("sampling factor must be >= 1")
    frames = list(range(0, n, factor))
    return SamplePlan(frames=frames, total_cost=None, transitions=[], config=None)


def median_skip(plan: SamplePlan) -> float:
    """Median of consecutive selected-index differences (lower middle for
    even counts)."""
    if len(plan.frames) < 2:
        raise ValueError("median skip needs at least 2 selected frames")
    gaps = np.diff(np.asarray(plan.frames))
    return float(lower_median(gaps))


def epipole_jitter(
    plan: SamplePlan, directions: Sequence[MotionDirection]
) -> JitterResult:
    """Mean magnitude of the change in motion-direction location between
    consecutive output transitions.

    ``directions`` must align with the plan's transitions (one per
    consecutive selected pair).  Transitions with an unavailable direction
    are excluded from the derivative and counted separately.
    """
    if len(plan.frames) < 3:
        raise ValueError("jitter needs at least 3 selected frames")
    if len(directions) != len(plan.frames) - 1:
        raise ValueError(
            f"expected {len(plan.frames) - 1} directions, got {len(directions)}"
        )
    points = [
        d.point for d in directions if d.source != SOURCE_UNAVAILABLE and d.point is not None
    ]
    unavailable = len(directions) - len(points)
    if len(points) < 2:
        raise ValueError("jitter needs at least 2 available directions")
    array = np.asarray(points)
    deltas = np.diff(array, axis=0)
    value = float(np.mean(np.hypot(deltas[:, 0], deltas[:, 1])))
    return JitterResult(
        value=value, derivative_count=len(points) - 1, unavailable_transitions=unavailable
    )


def jitter_improvement(plan_jitter: float, baseline_jitter: float) -> float:
    """Percentage improvement of the plan over the baseline.

    Computed as 100 * (baseline - plan) / plan, so values above 100% mean
    the baseline jitters more than twice as much; negative values mean the
    plan is worse than the baseline.
    """
    if baseline_jitter <= 0:
        raise ValueError("baseline jitter must be > 0")
    if plan_jitter <= 0:
        return float("inf")
    return 100.0 * (baseline_jitter - plan_jitter) / plan_jitter


def compute_plan_metrics(
    plan: SamplePlan,
    directions: Sequence[MotionDirection],
    baseline: SamplePlan,
    baseline_directions: Sequence[MotionDirection],
    input_frames: int,
) -> PlanMetrics:
    plan_jitter = epipole_jitter(plan, directions)
    base_jitter = epipole_jitter(baseline, baseline_directions)
    return PlanMetrics(
        input_frames=input_frames,
        output_frames=len(plan.frames),
        median_skip=median_skip(plan),
        jitter=plan_jitter.value,
        baseline_jitter=base_jitter.value,
        improvement_pct=jitter_improvement(plan_jitter.value, base_jitter.value),
        unavailable_transitions=plan_jitter.unavailable_transitions,
    )


def metrics_row(
    sequence_id: str, mode: str, order: str, metrics: PlanMetrics
) -> list[str]:
    """One CSV row matching METRICS_FIELDS."""
    return [
        sequence_id,
        mode,
        order,
        str(metrics.input_frames),
        str(metrics.output_frames),
        repr(metrics.median_skip),
        repr(metrics.jitter),
        repr(metrics.baseline_jitter),
        repr(metrics.improvement_pct),
        str(metrics.unavailable_transitions),
    ]
