"""Diagnostic figures written alongside the delimited outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from steadyskip.costgraph import SamplePlan
from steadyskip.epipolar import SOURCE_UNAVAILABLE, MotionDirection
from steadyskip.flow import SwayCurve
from steadyskip.stereo import SwayExtrema, smooth_curve

_DPI = 120


def save_sway_figure(
    curve: SwayCurve, extrema: SwayExtrema, window: int, path: Path
) -> Path:
    """Cumulative x-shift with the detected extrema marked."""
    smoothed = smooth_curve(curve, window)
    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(curve.values, color="0.75", lw=0.8, label="raw")
    ax.plot(smoothed.values, color="tab:blue", lw=1.2, label=f"smoothed (w={window})")
    if extrema.right_peaks:
        ax.plot(
            extrema.right_peaks,
            smoothed.values[extrema.right_peaks],
            "v",
            color="tab:red",
            ms=5,
            label="right peaks",
        )
    if extrema.left_peaks:
        ax.plot(
            extrema.left_peaks,
            smoothed.values[extrema.left_peaks],
            "^",
            color="tab:green",
            ms=5,
            label="left peaks",
        )
    ax.set_xlabel("frame")
    ax.set_ylabel("cumulative x-shift [px]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_plan_figure(
    plan: SamplePlan,
    input_frames: int,
    directions: Sequence[MotionDirection],
    path: Path,
) -> Path:
    """Skip profile and motion-direction offset along the selected plan."""
    frames = np.asarray(plan.frames)
    gaps = np.diff(frames)
    offsets = [
        np.hypot(*d.point) if d.source != SOURCE_UNAVAILABLE and d.point else np.nan
        for d in directions
    ]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 5), sharex=True)
    ax1.step(frames[1:], gaps, where="pre", color="tab:blue", lw=1.0)
    ax1.set_ylabel("frame skip")
    ax1.set_title(f"{len(frames)} of {input_frames} frames selected")
    ax2.plot(frames[1:], offsets, color="tab:orange", lw=1.0)
    ax2.set_ylabel("direction offset [px]")
    ax2.set_xlabel("input frame")
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)


def save_direction_comparison(
    plan_directions: Sequence[MotionDirection],
    baseline_directions: Sequence[MotionDirection],
    path: Path,
) -> Path:
    """Direction offset magnitude per output transition, plan vs uniform."""

    def offsets(directions: Sequence[MotionDirection]) -> np.ndarray:
        return np.array(
            [
                np.hypot(*d.point)
                if d.source != SOURCE_UNAVAILABLE and d.point
                else np.nan
                for d in directions
            ]
        )

    fig, ax = plt.subplots(figsize=(9, 3.2))
    ax.plot(offsets(baseline_directions), color="0.6", lw=0.9, label="uniform")
    ax.plot(offsets(plan_directions), color="tab:blue", lw=1.1, label="plan")
    ax.set_xlabel("output transition")
    ax.set_ylabel("direction offset [px]")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=_DPI)
    plt.close(fig)
    return Path(path)
