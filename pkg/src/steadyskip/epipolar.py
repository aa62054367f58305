"""Motion direction between frame pairs: epipole with FOE fallback.

For a pair (t, t+k) the preferred estimate chains grid flow into
correspondences, fits a fundamental matrix by RANSAC, and extracts the
epipole.  Whenever that path fails (too few correspondences, weak inlier
support, degenerate rotation-only geometry, epipole at or beyond bounds)
the direction falls back to the focus of expansion of the mean-integrated
flow.  Both estimates are reported in centered image coordinates (origin
at the image center, pixels).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from steadyskip.flow import FlowGrid, GridSpec, integrate_flow

DEFAULT_RANSAC_ITERATIONS = 500
DEFAULT_INLIER_THRESHOLD = 1.5  # Sampson distance, pixels
MIN_INLIERS = 16
MIN_INLIER_RATIO = 0.5
DEGENERACY_H_FRACTION = 0.95  # inlier share a single homography may explain
EPIPOLE_INFINITY_TOL = 1e-8
EPIPOLE_RANGE_DIAGONALS = 4.0
FOE_MIN_VECTORS = 10
FOE_MIN_MAGNITUDE = 0.05
FOE_MAX_CONDITION = 1e8
SEED_STRIDE = 100003  # per-pair RANSAC seed: t * SEED_STRIDE + k

SOURCE_EPIPOLE = "epipole"
SOURCE_FOE = "foe"
SOURCE_UNAVAILABLE = "unavailable"


class EstimationFailure(RuntimeError):
    """A geometric estimate could not be produced from the given data."""


@dataclass
class Correspondences:
    """Matched pixel positions in frame t (``points_a``) and t+k (``points_b``)."""

    points_a: np.ndarray
    points_b: np.ndarray

    @property
    def count(self) -> int:
        return int(len(self.points_a))


@dataclass
class FundamentalMatrix:
    """Rank-2, Frobenius-normalized 3x3 matrix with its RANSAC support."""

    matrix: np.ndarray
    inlier_count: int
    inlier_ratio: float


@dataclass
class MotionDirection:
    """Estimated translation direction for the span (t, t+k).

    ``point`` is in centered image coordinates and is ``None`` exactly when
    ``source`` is "unavailable".
    """

    point: tuple[float, float] | None
    source: str
    span: tuple[int, int]


# --- Chained correspondences ---


def _interpolated_step(
    positions: np.ndarray, grid_flow: FlowGrid, grid: GridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Advance positions by bilinear interpolation of the 4 surrounding
    anchors' vectors; returns (new_positions, still_alive)."""
    width, height = grid_flow.width, grid_flow.height
    anchors = grid_flow.points
    x0, y0 = anchors[0]
    cell_w, cell_h = grid.cell_size(width, height)
    cols, rows = grid.cols, grid.rows

    gx = (positions[:, 0] - x0) / cell_w
    gy = (positions[:, 1] - y0) / cell_h
    ix = np.clip(np.floor(gx).astype(np.int64), 0, max(cols - 2, 0))
    iy = np.clip(np.floor(gy).astype(np.int64), 0, max(rows - 2, 0))
    fx = np.clip(gx - ix, 0.0, 1.0)
    fy = np.clip(gy - iy, 0.0, 1.0)

    corner_idx = [
        iy * cols + ix,
        iy * cols + np.minimum(ix + 1, cols - 1),
        np.minimum(iy + 1, rows - 1) * cols + ix,
        np.minimum(iy + 1, rows - 1) * cols + np.minimum(ix + 1, cols - 1),
    ]
    weights = [
        (1 - fx) * (1 - fy),
        fx * (1 - fy),
        (1 - fx) * fy,
        fx * fy,
    ]

    move = np.zeros_like(positions)
    total = np.zeros(len(positions))
    nearest = np.full(len(positions), np.inf)
    for idx, w in zip(corner_idx, weights):
        ok = grid_flow.valid[idx]
        w_eff = np.where(ok, w, 0.0)
        move += w_eff[:, None] * grid_flow.vectors[idx]
        total += w_eff
        dist = np.hypot(
            positions[:, 0] - anchors[idx, 0], positions[:, 1] - anchors[idx, 1]
        )
        nearest = np.minimum(nearest, np.where(ok, dist, np.inf))

    # a chain survives only with a valid anchor within one grid cell
    alive = (total > 1e-12) & (nearest <= max(cell_w, cell_h))
    with np.errstate(invalid="ignore"):
        step = np.where(alive[:, None], move / np.maximum(total, 1e-12)[:, None], 0.0)
    new_positions = positions + step
    inside = (
        (new_positions[:, 0] >= 0)
        & (new_positions[:, 0] <= width - 1)
        & (new_positions[:, 1] >= 0)
        & (new_positions[:, 1] <= height - 1)
    )
    return new_positions, alive & inside


def chain_correspondences(
    flows: Sequence[FlowGrid], grid: GridSpec
) -> Correspondences:
    """Chain each grid anchor of the first frame through ``flows``.

    Chains are dropped when a step leaves the image or lands in a region
    with no valid anchor within one grid cell.  May return zero
    correspondences.
    """
    if not flows:
        raise ValueError("empty flow list")
    starts = flows[0].points.copy()
    positions = starts.copy()
    alive = np.ones(len(starts), dtype=bool)
    for grid_flow in flows:
        positions[alive], step_alive = _interpolated_step(
            positions[alive], grid_flow, grid
        )
        alive[np.flatnonzero(alive)[~step_alive]] = False
        if not alive.any():
            break
    return Correspondences(points_a=starts[alive], points_b=positions[alive])


# --- Fundamental matrix ---


def _normalize_points(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    centroid = points.mean(axis=0)
    shifted = points - centroid
    scale = np.sqrt(2.0) / max(np.mean(np.hypot(shifted[:, 0], shifted[:, 1])), 1e-12)
    transform = np.array(
        [
            [scale, 0.0, -scale * centroid[0]],
            [0.0, scale, -scale * centroid[1]],
            [0.0, 0.0, 1.0],
        ]
    )
    return shifted * scale, transform


def _design_matrix(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    x1, y1 = pa[..., 0], pa[..., 1]
    x2, y2 = pb[..., 0], pb[..., 1]
    ones = np.ones_like(x1)
    return np.stack(
        [x2 * x1, x2 * y1, x2, y2 * x1, y2 * y1, y2, x1, y1, ones], axis=-1
    )


def _enforce_rank2(f: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(f)
    s = s.copy()
    s[..., -1] = 0.0
    return u @ (s[..., :, None] * vt)


def _sampson_distance(f: np.ndarray, pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    """First-order geometric error in pixels; supports batched F (..., 3, 3)."""
    ones = np.ones((*pa.shape[:-1], 1))
    ha = np.concatenate([pa, ones], axis=-1)
    hb = np.concatenate([pb, ones], axis=-1)
    fa = ha @ np.swapaxes(f, -1, -2)  # rows: F @ ha
    ftb = hb @ f
    top = np.sum(hb * fa, axis=-1)
    denom = fa[..., 0] ** 2 + fa[..., 1] ** 2 + ftb[..., 0] ** 2 + ftb[..., 1] ** 2
    return np.abs(top) / np.sqrt(np.maximum(denom, 1e-300))


def _eight_point(pa_n: np.ndarray, pb_n: np.ndarray) -> np.ndarray:
    a = _design_matrix(pa_n, pb_n)
    _, _, vt = np.linalg.svd(a)
    return _enforce_rank2(vt[-1].reshape(3, 3))


def _canonicalize(f: np.ndarray) -> np.ndarray:
    f = f / max(np.linalg.norm(f), 1e-300)
    flat = f.ravel()
    if flat[np.argmax(np.abs(flat))] < 0:
        f = -f
    return f


def _fit_homography(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    pa_n, ta = _normalize_points(pa)
    pb_n, tb = _normalize_points(pb)
    n = len(pa)
    a = np.zeros((2 * n, 9))
    x, y = pa_n[:, 0], pa_n[:, 1]
    u, v = pb_n[:, 0], pb_n[:, 1]
    a[0::2, 0] = -x
    a[0::2, 1] = -y
    a[0::2, 2] = -1.0
    a[0::2, 6] = u * x
    a[0::2, 7] = u * y
    a[0::2, 8] = u
    a[1::2, 3] = -x
    a[1::2, 4] = -y
    a[1::2, 5] = -1.0
    a[1::2, 6] = v * x
    a[1::2, 7] = v * y
    a[1::2, 8] = v
    _, _, vt = np.linalg.svd(a)
    return np.linalg.inv(tb) @ vt[-1].reshape(3, 3) @ ta


def _homography_explained_fraction(
    pa: np.ndarray, pb: np.ndarray, threshold: float
) -> float:
    """Share of correspondences a single DLT homography transfers within
    ``threshold`` pixels; near 1 means no usable parallax."""
    h = _fit_homography(pa, pb)
    ones = np.ones((len(pa), 1))
    projected = np.concatenate([pa, ones], axis=1) @ h.T
    with np.errstate(divide="ignore", invalid="ignore"):
        projected = projected[:, :2] / projected[:, 2:3]
    errors = np.hypot(projected[:, 0] - pb[:, 0], projected[:, 1] - pb[:, 1])
    return float(np.mean(errors < threshold))


def estimate_fundamental_ransac(
    correspondences: Correspondences,
    iterations: int = DEFAULT_RANSAC_ITERATIONS,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
    *,
    seed: int = 0,
    min_inliers: int = MIN_INLIERS,
    min_inlier_ratio: float = MIN_INLIER_RATIO,
    degeneracy_fraction: float = DEGENERACY_H_FRACTION,
) -> FundamentalMatrix:
    """Normalized 8-point solver inside RANSAC, refit on all inliers.

    Fails when fewer than 8 correspondences are given, when the inlier
    support is too weak (< ``min_inliers`` or ratio < ``min_inlier_ratio``),
    or when a single homography explains almost all inliers — the
    signature of rotation-only or single-plane geometry, where a 3-dim
    family of matrices fits the data and the epipole is arbitrary.

    The RANSAC sample sequence is fully determined by ``seed``.
    """
    n = correspondences.count
    if n < 8:
        raise EstimationFailure(f"insufficient correspondences ({n} < 8)")
    pa = np.asarray(correspondences.points_a, dtype=np.float64)
    pb = np.asarray(correspondences.points_b, dtype=np.float64)
    pa_n, ta = _normalize_points(pa)
    pb_n, tb = _normalize_points(pb)

    rng = np.random.default_rng(seed)
    samples = np.argsort(rng.random((iterations, n)), axis=1)[:, :8]
    f_norm = np.zeros((iterations, 3, 3))
    design = _design_matrix(pa_n[samples], pb_n[samples])  # (iters, 8, 9)
    _, _, vt = np.linalg.svd(design)
    f_norm = _enforce_rank2(vt[:, -1, :].reshape(iterations, 3, 3))
    f_pixel = tb.T @ f_norm @ ta

    distances = _sampson_distance(f_pixel, pa[None, :, :], pb[None, :, :])
    inlier_masks = distances < inlier_threshold
    counts = inlier_masks.sum(axis=1)
    best = int(np.argmax(counts))
    if counts[best] < 8:
        raise EstimationFailure(
            f"no consensus: best sample explains {counts[best]} of {n} points"
        )

    support = inlier_masks[best]
    f_refit_n = _eight_point(pa_n[support], pb_n[support])
    f_refit = _canonicalize(tb.T @ f_refit_n @ ta)

    final_mask = _sampson_distance(f_refit, pa, pb) < inlier_threshold
    inlier_count = int(final_mask.sum())
    inlier_ratio = inlier_count / n
    if inlier_count < min_inliers or inlier_ratio < min_inlier_ratio:
        raise EstimationFailure(
            f"weak support: {inlier_count}/{n} inliers (ratio {inlier_ratio:.2f})"
        )

    explained = _homography_explained_fraction(
        pa[final_mask], pb[final_mask], inlier_threshold
    )
    if explained >= degeneracy_fraction:
        raise EstimationFailure("degenerate correspondence geometry (no parallax)")

    return FundamentalMatrix(
        matrix=f_refit, inlier_count=inlier_count, inlier_ratio=inlier_ratio
    )


def epipole_from_f(
    f: FundamentalMatrix | np.ndarray, width: int, height: int
) -> tuple[float, float]:
    """Dehomogenized right null vector of F, shifted to centered coordinates.

    Fails when the epipole is at infinity (homogeneous w below 1e-8 of the
    vector norm) or farther than 4 image diagonals from the center.
    """
    matrix = f.matrix if isinstance(f, FundamentalMatrix) else np.asarray(f)
    _, _, vt = np.linalg.svd(matrix)
    null = vt[-1]
    norm = np.linalg.norm(null)
    if abs(null[2]) < EPIPOLE_INFINITY_TOL * norm:
        raise EstimationFailure("epipole at infinity")
    x = null[0] / null[2] - width / 2.0
    y = null[1] / null[2] - height / 2.0
    diagonal = float(np.hypot(width, height))
    if np.hypot(x, y) > EPIPOLE_RANGE_DIAGONALS * diagonal:
        raise EstimationFailure("epipole beyond plausible range")
    return (float(x), float(y))


# --- Focus of expansion ---


def estimate_foe(
    integrated, width: int, height: int,
    *,
    min_vectors: int = FOE_MIN_VECTORS,
    min_magnitude: float = FOE_MIN_MAGNITUDE,
    max_condition: float = FOE_MAX_CONDITION,
) -> tuple[float, float]:
    """Least-squares intersection of the flow lines, centered coordinates.

    Minimizes the summed squared perpendicular distance to the line through
    each anchor along its aggregated vector.  Vectors shorter than
    ``min_magnitude`` pixels are excluded; fails with fewer than
    ``min_vectors`` usable vectors or an ill-conditioned normal matrix.
    """
    vectors = integrated.vectors
    points = integrated.points
    norms = np.hypot(vectors[:, 0], vectors[:, 1])
    usable = norms >= min_magnitude
    if int(usable.sum()) < min_vectors:
        raise EstimationFailure(
            f"motion direction unavailable: {int(usable.sum())} usable vectors"
        )
    v = vectors[usable] / norms[usable, None]
    p = points[usable]
    normals = np.stack([-v[:, 1], v[:, 0]], axis=1)
    a = normals.T @ normals
    b = normals.T @ np.sum(normals * p, axis=1)
    eigs = np.linalg.eigvalsh(a)
    if eigs[0] <= 0 or eigs[1] / eigs[0] > max_condition:
        raise EstimationFailure("motion direction unavailable: parallel flow lines")
    foe = np.linalg.solve(a, b)
    return (float(foe[0] - width / 2.0), float(foe[1] - height / 2.0))


# --- Combined estimate ---


def pair_seed(t: int, k: int) -> int:
    return t * SEED_STRIDE + k


def motion_direction(
    t: int,
    k: int,
    flows: Sequence[FlowGrid],
    grid: GridSpec,
    mode: str = "epipolar",
    *,
    ransac_iterations: int = DEFAULT_RANSAC_ITERATIONS,
    inlier_threshold: float = DEFAULT_INLIER_THRESHOLD,
) -> MotionDirection:
    """Motion direction for the span (t, t+k) with documented fallback.

    ``flows`` is the full list of consecutive flow grids (flows[i].t == i).
    In "epipolar" mode the chain -> RANSAC -> epipole path is tried first
    and any failure falls back to the FOE of the mean-integrated flow; in
    "foe-only" mode the FOE is used directly.  ``source`` records which
    path succeeded; an unavailable direction is a valid result.
    """
    if mode not in ("epipolar", "foe-only"):
        raise ValueError(f"unknown mode {mode!r}")
    if k < 1:
        raise ValueError("skip k must be >= 1")
    if t < 0 or t + k > len(flows):
        raise ValueError(f"span ({t}, {t + k}) outside flow sequence")
    span_flows = flows[t : t + k]
    span = (t, t + k)
    width, height = span_flows[0].width, span_flows[0].height

    if mode == "epipolar":
        try:
            corr = chain_correspondences(span_flows, grid)
            fundamental = estimate_fundamental_ransac(
                corr,
                iterations=ransac_iterations,
                inlier_threshold=inlier_threshold,
                seed=pair_seed(t, k),
            )
            point = epipole_from_f(fundamental, width, height)
            return MotionDirection(point=point, source=SOURCE_EPIPOLE, span=span)
        except EstimationFailure:
            pass

    try:
        integrated = integrate_flow(span_flows, "mean")
        point = estimate_foe(integrated, width, height)
        return MotionDirection(point=point, source=SOURCE_FOE, span=span)
    except EstimationFailure:
        return MotionDirection(point=None, source=SOURCE_UNAVAILABLE, span=span)


# --- Cache file (line-delimited JSON, one record per (t, k) pair) ---


def write_direction_cache(
    path: Path | str, directions: Sequence[MotionDirection]
) -> None:
    with Path(path).open("w", encoding="utf-8") as handle:
        for d in directions:
            record = {
                "t": d.span[0],
                "k": d.span[1] - d.span[0],
                "source": d.source,
                "x": None if d.point is None else float(d.point[0]),
                "y": None if d.point is None else float(d.point[1]),
            }
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def read_direction_cache(path: Path | str) -> list[MotionDirection]:
    directions = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            record = json.loads(line)
            point = None
            if record["x"] is not None:
                point = (float(record["x"]), float(record["y"]))
            directions.append(
                MotionDirection(
                    point=point,
                    source=record["source"],
                    span=(int(record["t"]), int(record["t"]) + int(record["k"])),
                )
            )
    return directions
