"""Stereo pairs from lateral head sway, and anaglyph composition.

A walking wearer's head oscillates left-right with each step; frames taken
at opposite extremes of that sway approximate a stereo pair.  The sway is
read off the cumulative horizontal-shift curve: its local maxima and
minima mark the extreme head positions, and alternating extrema are paired
into left/right views.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from steadyskip.flow import SwayCurve
from steadyskip.ingest import Frame
from steadyskip.metrics import lower_median

DEFAULT_SMOOTH_WINDOW = 5
DEFAULT_PROMINENCE = 1.0
PAIR_SPACING_FACTOR = 2.0  # max |left - right| as a multiple of the median peak spacing


@dataclass
class SwayExtrema:
    """Frame indices at the sway extremes of the smoothed shift curve."""

    right_peaks: list[int]  # local maxima of the curve
    left_peaks: list[int]  # local minima
    window: int
    prominence: float


@dataclass
class StereoPairs:
    pairs: list[tuple[int, int]]  # (right-extreme frame, left-extreme frame)

    def to_dict(self) -> dict:
        return {"pairs": [[int(a), int(b)] for a, b in self.pairs]}


def smooth_curve(curve: SwayCurve, window: int) -> SwayCurve:
    """Centered moving average; the window shrinks at the boundaries."""
    n = len(curve.values)
    if window < 1 or window % 2 == 0:
        raise ValueError("smoothing window must be odd and >= 1")
    if window > n:
        raise ValueError(f"smoothing window {window} exceeds curve length {n}")
    if window == 1:
        return SwayCurve(values=curve.values.copy())
    half = window // 2
    padded = np.concatenate([[0.0], np.cumsum(curve.values)])
    lo = np.maximum(np.arange(n) - half, 0)
    hi = np.minimum(np.arange(n) + half + 1, n)
    sums = padded[hi] - padded[lo]
    return SwayCurve(values=sums / (hi - lo))


def _run_compressed(values: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Collapse equal-value plateaus to (start, end, value) runs."""
    changes = np.flatnonzero(np.diff(values) != 0.0)
    starts = np.concatenate([[0], changes + 1])
    ends = np.concatenate([changes, [len(values) - 1]])
    return starts, ends, values[starts]


def _maxima_with_prominence(values: np.ndarray, threshold: float) -> list[int]:
    """Local maxima whose height above the higher flanking valley reaches
    ``threshold``; plateaus report their center index."""
    starts, ends, run_values = _run_compressed(values)
    if len(run_values) < 3:
        return []
    is_max = (run_values[1:-1] > run_values[:-2]) & (run_values[1:-1] > run_values[2:])
    max_runs = np.flatnonzero(is_max) + 1
    if len(max_runs) == 0:
        return []
    peaks = []
    for which, run in enumerate(max_runs):
        left_bound = starts[max_runs[which - 1]] if which > 0 else 0
        right_bound = (
            ends[max_runs[which + 1]] if which + 1 < len(max_runs) else len(values) - 1
        )
        peak_value = run_values[run]
        left_valley = values[left_bound : starts[run] + 1].min()
        right_valley = values[ends[run] : right_bound + 1].min()
        prominence = peak_value - max(left_valley, right_valley)
        if prominence >= threshold:
            peaks.append(int((starts[run] + ends[run]) // 2))
    return peaks


def detect_sway_extrema(
    curve: SwayCurve,
    window: int = DEFAULT_SMOOTH_WINDOW,
    prominence: float = DEFAULT_PROMINENCE,
) -> SwayExtrema:
    """Prominent local maxima (right-most head positions) and minima
    (left-most) of the smoothed shift curve.  May return empty lists."""
    if len(curve.values) < 3:
        raise ValueError("curve must have at least 3 samples")
    smoothed = smooth_curve(curve, window)
    right = _maxima_with_prominence(smoothed.values, prominence)
    left = _maxima_with_prominence(-smoothed.values, prominence)
    return SwayExtrema(
        right_peaks=right, left_peaks=left, window=window, prominence=prominence
    )


def pair_stereo_frames(extrema: SwayExtrema) -> StereoPairs:
    """Pair each right peak with the nearest subsequent unconsumed left peak.

    Pairs whose members are farther apart than twice the median peak
    spacing (one gait half-period is the expected gap) are dropped; so are
    peaks overlapped by an already formed pair, keeping the output
    strictly alternating and temporally ordered.
    """
    rights = sorted(extrema.right_peaks)
    lefts = sorted(extrema.left_peaks)
    if not rights or not lefts:
        raise ValueError("need at least one sway peak of each polarity")
    merged = np.array(sorted(rights + lefts), dtype=np.float64)
    if len(merged) > 1:
        max_gap = PAIR_SPACING_FACTOR * lower_median(np.diff(merged))
    else:
        max_gap = np.inf

    pairs: list[tuple[int, int]] = []
    li = 0
    floor = -1
    for right in rights:
        if right <= floor:
            continue
        while li < len(lefts) and lefts[li] <= right:
            li += 1
        if li == len(lefts):
            break
        left = lefts[li]
        if left - right <= max_gap:
            pairs.append((right, left))
            li += 1
            floor = left
    return StereoPairs(pairs=pairs)


def compose_anaglyph(left: Frame, right: Frame) -> Frame:
    """Red-cyan composite: red from the left frame, green/blue from the right."""
    if left.data.shape != right.data.shape:
        raise ValueError("stereo frames must have equal dimensions")
    data = right.data.copy()
    data[:, :, 0] = left.data[:, :, 0]
    return Frame(index=left.index, data=data)


def compose_side_by_side(left: Frame, right: Frame) -> Frame:
    if left.data.shape != right.data.shape:
        raise ValueError("stereo frames must have equal dimensions")
    return Frame(index=left.index, data=np.concatenate([left.data, right.data], axis=1))
