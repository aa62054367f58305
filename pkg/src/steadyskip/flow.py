"""Sparse grid optical flow and its temporal aggregates.

Flow is tracked on a fixed coarse grid of anchors (5x10 = 50 by default)
with a pyramidal iterative least-squares tracker.  Aggregation over spans
of consecutive frames produces the mean/sum fields consumed by the motion
direction and velocity costs, and the cumulative horizontal shift curve
consumed by the stereo stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from steadyskip.ingest import Pyramid

DEFAULT_WINDOW = 15
DEFAULT_MAX_ITERATIONS = 20
DEFAULT_TOLERANCE = 0.01
DEFAULT_MIN_EIGEN_RATIO = 1e-4


class FlowUnavailableError(RuntimeError):
    """Raised when an aggregate has no anchors to draw on."""


@dataclass(frozen=True)
class GridSpec:
    """Anchor layout: ``rows`` x ``cols`` points inset by a fractional margin."""

    rows: int = 5
    cols: int = 10
    margin: float = 0.05

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise ValueError("grid must have at least one row and column")
        if not 0.0 <= self.margin < 0.25:
            raise ValueError("grid margin must be in [0, 0.25)")

    @property
    def count(self) -> int:
        return self.rows * self.cols

    def anchor_positions(self, width: int, height: int) -> np.ndarray:
        """Anchor pixel positions (count, 2) at the cell centers of the
        margin-inset image rectangle, row major."""
        x0 = self.margin * width
        y0 = self.margin * height
        cell_w = (width - 2 * x0) / self.cols
        cell_h = (height - 2 * y0) / self.rows
        xs = x0 + (np.arange(self.cols) + 0.5) * cell_w
        ys = y0 + (np.arange(self.rows) + 0.5) * cell_h
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def cell_size(self, width: int, height: int) -> tuple[float, float]:
        return (
            (width - 2 * self.margin * width) / self.cols,
            (height - 2 * self.margin * height) / self.rows,
        )


@dataclass
class FlowGrid:
    """Grid flow between frames ``t`` and ``t+1`` in source pixel units."""

    t: int
    width: int
    height: int
    points: np.ndarray  # (count, 2) anchor positions
    vectors: np.ndarray  # (count, 2) displacements
    valid: np.ndarray  # (count,) bool, tracking converged

    def __post_init__(self) -> None:
        if not (len(self.points) == len(self.vectors) == len(self.valid)):
            raise ValueError("points, vectors and valid must have equal length")


@dataclass
class IntegratedFlow:
    """Per-anchor aggregate over a span of consecutive flow grids.

    Only anchors valid in every constituent grid are included.
    """

    points: np.ndarray
    vectors: np.ndarray
    kind: str  # "mean" | "sum"
    span: tuple[int, int]


@dataclass
class SwayCurve:
    """Per-frame cumulative mean horizontal shift, in pixels."""

    values: np.ndarray

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class FlowStatistics:
    per_frame: list[float | None]
    mean_magnitude: float | None


# --- Tracking ---


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    h, w = img.shape
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, w - 2)
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, h - 2)
    fx = np.clip(xs - x0, 0.0, 1.0)
    fy = np.clip(ys - y0, 0.0, 1.0)
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bottom = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    return top * (1 - fy) + bottom * fy


def _window_inside(centers: np.ndarray, width: int, height: int, half: int) -> np.ndarray:
    return (
        (centers[:, 0] >= half)
        & (centers[:, 0] <= width - 1 - half)
        & (centers[:, 1] >= half)
        & (centers[:, 1] <= height - 1 - half)
    )


def sparse_lk_flow(
    prev: Pyramid,
    nxt: Pyramid,
    grid: GridSpec,
    *,
    window: int = DEFAULT_WINDOW,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    tolerance: float = DEFAULT_TOLERANCE,
    min_eigen_ratio: float = DEFAULT_MIN_EIGEN_RATIO,
    t: int = 0,
) -> FlowGrid:
    """Track every grid anchor from ``prev`` to ``nxt`` coarse to fine.

    At each pyramid level the displacement is refined by iterative
    least squares over a ``window`` x ``window`` patch (at most
    ``max_iterations`` iterations, convergence below ``tolerance`` pixels).
    An anchor is invalid when its gradient matrix at full resolution is
    near-singular (smaller eigenvalue below ``min_eigen_ratio`` of the
    window gradient energy) or when the track leaves the image.
    """
    if prev.levels[0].data.shape != nxt.levels[0].data.shape:
        raise ValueError("pyramids must come from equally sized frames")
    height, width = prev.levels[0].data.shape
    anchors = grid.anchor_positions(width, height)
    count = anchors.shape[0]
    half = window // 2
    offsets = np.arange(window, dtype=np.float64) - half
    off_y, off_x = np.meshgrid(offsets, offsets, indexing="ij")
    off_x = off_x.ravel()
    off_y = off_y.ravel()

    disp = np.zeros((count, 2))
    alive = np.ones(count, dtype=bool)
    min_eig_ok = np.ones(count, dtype=bool)

    levels = min(prev.level_count, nxt.level_count)
    for level in reversed(range(levels)):
        img1 = prev.levels[level].data
        img2 = nxt.levels[level].data
        lh, lw = img1.shape
        centers = (anchors + 0.5) / (2.0**level) - 0.5
        grad_y, grad_x = np.gradient(img1)

        fits = _window_inside(centers, lw, lh, half)
        refine = alive & fits
        if not refine.any():
            disp *= 2.0 if level > 0 else 1.0
            continue

        cx = centers[refine, 0:1] + off_x[None, :]
        cy = centers[refine, 1:2] + off_y[None, :]
        template = _bilinear(img1, cx, cy)
        gx = _bilinear(grad_x, cx, cy)
        gy = _bilinear(grad_y, cx, cy)
        gxx = np.sum(gx * gx, axis=1)
        gxy = np.sum(gx * gy, axis=1)
        gyy = np.sum(gy * gy, axis=1)
        det = gxx * gyy - gxy * gxy
        trace = gxx + gyy
        disc = np.sqrt(np.maximum((gxx - gyy) ** 2 + 4 * gxy * gxy, 0.0))
        min_eig = 0.5 * (trace - disc)
        solvable = (det > 1e-300) & (min_eig >= min_eigen_ratio * np.maximum(trace, 1e-300))

        if level == 0:
            bad = np.zeros(count, dtype=bool)
            bad[refine] = ~solvable
            min_eig_ok &= ~bad
            # anchors whose window never fits at full resolution cannot be assessed
            min_eig_ok &= fits

        idx = np.flatnonzero(refine)
        d_local = disp[idx]
        active = solvable.copy()
        out_of_image = np.zeros(len(idx), dtype=bool)
        for _ in range(max_iterations):
            if not active.any():
                break
            ai = np.flatnonzero(active)
            px = cx[ai] + d_local[ai, 0:1]
            py = cy[ai] + d_local[ai, 1:2]
            moved_centers = np.stack(
                [centers[idx[ai], 0] + d_local[ai, 0], centers[idx[ai], 1] + d_local[ai, 1]],
                axis=1,
            )
            inside = _window_inside(moved_centers, lw, lh, half)
            if not inside.all():
                gone = ai[~inside]
                out_of_image[gone] = True
                active[gone] = False
                ai = ai[inside]
                if len(ai) == 0:
                    break
                px = cx[ai] + d_local[ai, 0:1]
                py = cy[ai] + d_local[ai, 1:2]
            warped = _bilinear(img2, px, py)
            residual = template[ai] - warped
            bx = np.sum(residual * gx[ai], axis=1)
            by = np.sum(residual * gy[ai], axis=1)
            inv_det = 1.0 / det[ai]
            du = (gyy[ai] * bx - gxy[ai] * by) * inv_det
            dv = (gxx[ai] * by - gxy[ai] * bx) * inv_det
            d_local[ai, 0] += du
            d_local[ai, 1] += dv
            converged = np.hypot(du, dv) < tolerance
            active[ai[converged]] = False

        disp[idx] = d_local
        if level == 0:
            diverged = np.zeros(count, dtype=bool)
            diverged[idx] = out_of_image
            final_centers = centers + disp
            diverged |= ~_window_inside(final_centers, lw, lh, half)
            alive &= ~diverged
        else:
            # track lost at a coarse level: restart the finer levels from zero
            disp[idx[out_of_image]] = 0.0
            disp *= 2.0

    valid = alive & min_eig_ok
    vectors = np.where(valid[:, None], disp, 0.0)
    return FlowGrid(
        t=t, width=width, height=height, points=anchors, vectors=vectors, valid=valid
    )


# --- Aggregation ---


def _check_consecutive(flows: Sequence[FlowGrid]) -> None:
    if not flows:
        raise ValueError("empty flow list")
    base = flows[0].t
    for offset, grid in enumerate(flows):
        if grid.t != base + offset:
            raise ValueError(
                f"gap in frame indices: expected t={base + offset}, got t={grid.t}"
            )


def integrate_flow(flows: Sequence[FlowGrid], kind: str) -> IntegratedFlow:
    """Component-wise mean or sum of consecutive grids.

    An anchor contributes only when it is valid in all ``len(flows)``
    grids; others are dropped rather than zero-filled to avoid biasing
    downstream estimates toward zero.
    """
    if kind not in ("mean", "sum"):
        raise ValueError(f"kind must be 'mean' or 'sum', got {kind!r}")
    _check_consecutive(flows)
    mask = np.logical_and.reduce([g.valid for g in flows])
    total = np.zeros_like(flows[0].vectors)
    for g in flows:
        total = total + g.vectors
    if kind == "mean":
        total = total / len(flows)
    return IntegratedFlow(
        points=flows[0].points[mask],
        vectors=total[mask],
        kind=kind,
        span=(flows[0].t, flows[0].t + len(flows)),
    )


def mean_flow_magnitude(integrated: IntegratedFlow) -> float:
    """Mean Euclidean norm of the aggregated vectors."""
    if len(integrated.vectors) == 0:
        raise FlowUnavailableError(
            f"no anchors valid across span {integrated.span}"
        )
    return float(np.mean(np.hypot(integrated.vectors[:, 0], integrated.vectors[:, 1])))


def sequence_flow_statistics(flows: Sequence[FlowGrid]) -> FlowStatistics:
    """Per-frame mean magnitude of valid vectors plus their global average.

    Frames with no valid vectors contribute ``None`` and are excluded from
    the global average.
    """
    per_frame: list[float | None] = []
    usable = []
    for g in flows:
        if g.valid.any():
            vec = g.vectors[g.valid]
            value = float(np.mean(np.hypot(vec[:, 0], vec[:, 1])))
            per_frame.append(value)
            usable.append(value)
        else:
            per_frame.append(None)
    mean = float(np.mean(usable)) if usable else None
    return FlowStatistics(per_frame=per_frame, mean_magnitude=mean)


def cumulative_x_shift(flows: Sequence[FlowGrid]) -> SwayCurve:
    """Cumulative mean horizontal shift; values[0] = 0, one value per frame."""
    values = np.zeros(len(flows) + 1)
    for i, g in enumerate(flows):
        if g.valid.any():
            step = float(np.mean(g.vectors[g.valid, 0]))
        else:
            step = 0.0
        values[i + 1] = values[i] + step
    return SwayCurve(values=values)


# --- Cache file (line-delimited JSON, one record per frame pair) ---


def write_flow_cache(path: Path | str, flows: Iterable[FlowGrid]) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for g in flows:
            record = {
                "t": g.t,
                "width": g.width,
                "height": g.height,
                "points": [[float(x), float(y)] for x, y in g.points],
                "vectors": [[float(x), float(y)] for x, y in g.vectors],
                "valid": [bool(v) for v in g.valid],
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_flow_cache(path: Path | str) -> list[FlowGrid]:
    flows = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            flows.append(
                FlowGrid(
                    t=int(record["t"]),
                    width=int(record["width"]),
                    height=int(record["height"]),
                    points=np.asarray(record["points"], dtype=np.float64),
                    vectors=np.asarray(record["vectors"], dtype=np.float64),
                    valid=np.asarray(record["valid"], dtype=bool),
                )
            )
    flows.sort(key=lambda g: g.t)
    return flows
