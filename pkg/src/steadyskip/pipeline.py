"""End-to-end orchestration shared by the CLI commands.

Responsibilities: decode or inject flow, build the per-pair direction and
cost tables (vectorized; the (t, k) table is the dominant compute cost),
solve for the plan, evaluate it against the uniform baseline, and write
all artifacts (JSON plans, CSV metrics, optional cost dumps, figures,
rendered frames) atomically.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from steadyskip import epipolar, flow as flow_mod, metrics as metrics_mod
from steadyskip.costgraph import (
    CostTable,
    SamplePlan,
    SamplingConfig,
    SENTINEL_COST,
    TransitionCosts,
    apply_importance_bias,
    build_first_order_graph,
    build_second_order_graph,
    color_histogram,
    half_diagonal,
    shortest_path,
)
from steadyskip.epipolar import (
    SOURCE_EPIPOLE,
    SOURCE_FOE,
    SOURCE_UNAVAILABLE,
    EstimationFailure,
    MotionDirection,
)
from steadyskip.flow import FlowGrid, GridSpec
from steadyskip.ingest import (
    Frame,
    FrameSourceError,
    build_pyramid,
    open_frame_source,
    to_grayscale,
    write_ppm,
)
from steadyskip.metrics import PlanMetrics, compute_plan_metrics, metrics_row
from steadyskip.stereo import (
    StereoPairs,
    SwayExtrema,
    compose_anaglyph,
    compose_side_by_side,
    detect_sway_extrema,
    pair_stereo_frames,
)
from steadyskip.synth import SyntheticSequence, WalkSceneParams, generate_walk_scene

_SRC_CODE = {SOURCE_EPIPOLE: 0, SOURCE_FOE: 1, SOURCE_UNAVAILABLE: 2}


class PipelineInputError(ValueError):
    """Unusable input: missing/invalid files, empty flow, bad overrides."""


@dataclass
class RunConfig:
    """Merged CLI / config-file settings for one command invocation."""

    input: Path | None = None
    out: Path = Path("steadyskip_out")
    mode: str = "epipolar"
    order: str = "first"
    alpha: float | None = None
    beta: float | None = None
    gamma: float | None = None
    c_foe: float | None = None
    eta: float | None = None
    tau: int = 100
    d_start: int = 120
    d_end: int = 120
    speedup: float = 10.0
    k_flow: float | None = None
    frame_range: tuple[int, int] | None = None
    grid_rows: int = 5
    grid_cols: int = 10
    grid_margin: float = 0.05
    flow_max_side: int = 640
    flow_window: int = 15
    flow_levels: int = 3
    ransac_iterations: int = 500
    inlier_threshold: float = 1.5
    flow_cache: Path | None = None
    direction_cache: Path | None = None
    importance: Path | None = None
    plan: Path | None = None
    sequence_id: str | None = None
    smooth_window: int = 5
    prominence: float = 1.0
    swap_eyes: bool = False
    side_by_side: bool = False
    render: bool = False
    figures: bool = True
    costs_csv: bool = False
    seed: int = 0
    # synthetic-scene settings
    frames: int = 300
    width: int = 640
    height: int = 480
    speed: float = 0.05
    sway_amp: float = 0.05
    sway_period: float = 30.0
    yaw_amp: float = 0.0
    yaw_period: float = 40.0
    saccade_every: int = 0
    saccade_angle: float = 10.0
    saccade_duration: int = 10
    points: int = 300
    depth_min: float = 5.0
    depth_max: float = 50.0
    noise: float = 0.0
    max_skip_truth: int = 1

    def grid(self) -> GridSpec:
        return GridSpec(rows=self.grid_rows, cols=self.grid_cols, margin=self.grid_margin)

    def sampling_config(self, k_flow: float) -> SamplingConfig:
        overrides: dict = {"k_flow": k_flow, "tau": self.tau, "d_start": self.d_start,
                           "d_end": self.d_end, "order": self.order}
        for name in ("alpha", "beta", "gamma", "eta"):
            value = getattr(self, name)
            if value is not None:
                overrides[name] = value
        if self.c_foe is not None:
            overrides["c_foe"] = self.c_foe
        return SamplingConfig.defaults(self.mode, **overrides)

    def label(self) -> str:
        if self.sequence_id:
            return self.sequence_id
        if self.input is not None:
            return Path(self.input).stem
        return "sequence"


# --- Atomic file writes ---


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    handle = tempfile.NamedTemporaryFile(
        "w", encoding="utf-8", dir=path.parent, delete=False, suffix=".tmp"
    )
    try:
        handle.write(text)
        handle.close()
        os.replace(handle.name, path)
    except BaseException:
        handle.close()
        os.unlink(handle.name)
        raise


# --- Flow computation ---


def _downscale_levels(width: int, height: int, max_side: int) -> int:
    levels = 0
    w, h = width, height
    while max(w, h) > max_side and min(w, h) // 2 >= 16:
        w //= 2
        h //= 2
        levels += 1
    return levels


def _rescale_flow(grid_flow: FlowGrid, width: int, height: int) -> FlowGrid:
    if grid_flow.width == width and grid_flow.height == height:
        return grid_flow
    scale = np.array([width / grid_flow.width, height / grid_flow.height])
    return FlowGrid(
        t=grid_flow.t,
        width=width,
        height=height,
        points=grid_flow.points * scale,
        vectors=grid_flow.vectors * scale,
        valid=grid_flow.valid,
    )


def compute_flows(
    frames: Iterable[Frame],
    grid: GridSpec,
    *,
    max_side: int = 640,
    window: int = 15,
    levels: int = 3,
    collect_histograms: bool = True,
) -> tuple[list[FlowGrid], np.ndarray | None, int]:
    """Track grid flow over consecutive frames in one streaming pass.

    Flow is computed after downscaling the longest side to at most
    ``max_side`` (by pyramid halving) and reported in original pixel units.
    Returns (flows, per-frame histograms or None, frame count).
    """
    flows: list[FlowGrid] = []
    histograms: list[np.ndarray] = []
    prev_pyramid = None
    count = 0
    size: tuple[int, int] | None = None
    for frame in frames:
        if size is None:
            size = (frame.width, frame.height)
        if collect_histograms:
            histograms.append(color_histogram(frame).bins)
        down = _downscale_levels(frame.width, frame.height, max_side)
        pyramid = build_pyramid(to_grayscale(frame), max_levels=down + levels)
        track = type(pyramid)(levels=pyramid.levels[min(down, pyramid.level_count - 1):])
        if prev_pyramid is not None:
            small = flow_mod.sparse_lk_flow(
                prev_pyramid, track, grid, window=window, t=count - 1
            )
            flows.append(_rescale_flow(small, frame.width, frame.height))
        prev_pyramid = track
        count += 1
    if count == 0:
        raise PipelineInputError("input stream contained no frames")
    hist = np.stack(histograms) if collect_histograms and histograms else None
    return flows, hist, count


def load_or_compute_flows(
    cfg: RunConfig, *, need_histograms: bool
) -> tuple[list[FlowGrid], np.ndarray | None, int]:
    """Resolve flow grids from the cache and/or the input frames."""
    cached: list[FlowGrid] | None = None
    if cfg.flow_cache is not None and Path(cfg.flow_cache).exists():
        cached = flow_mod.read_flow_cache(cfg.flow_cache)
        if not cached:
            raise PipelineInputError(f"flow cache {cfg.flow_cache} is empty")

    if cfg.input is None:
        if cached is None:
            raise PipelineInputError("no input frames and no flow cache given")
        return cached, None, len(cached) + 1

    frames = open_frame_source(cfg.input, cfg.frame_range)
    if cached is not None:
        histograms = []
        count = 0
        if need_histograms:
            for frame in frames:
                histograms.append(color_histogram(frame).bins)
                count += 1
        else:
            count = sum(1 for _ in frames)
        if count != len(cached) + 1:
            raise PipelineInputError(
                f"flow cache holds {len(cached)} transitions but input has {count} frames"
            )
        hist = np.stack(histograms) if histograms else None
        return cached, hist, count

    flows, hist, count = compute_flows(
        frames,
        cfg.grid(),
        max_side=cfg.flow_max_side,
        window=cfg.flow_window,
        levels=cfg.flow_levels,
        collect_histograms=need_histograms,
    )
    if len(flows) == 0:
        raise PipelineInputError("need at least 2 frames")
    if cfg.flow_cache is not None:
        flow_mod.write_flow_cache(cfg.flow_cache, flows)
    return flows, hist, count


# --- Direction and cost tables (vectorized over k for each t) ---


@dataclass
class DirectionTable:
    x: np.ndarray  # (n, tau), NaN when unavailable
    y: np.ndarray
    source: np.ndarray  # (n, tau) int8 codes, -1 out of range

    def direction(self, i: int, j: int) -> MotionDirection:
        k = j - i - 1
        code = int(self.source[i, k])
        if code == _SRC_CODE[SOURCE_EPIPOLE]:
            source = SOURCE_EPIPOLE
        elif code == _SRC_CODE[SOURCE_FOE]:
            source = SOURCE_FOE
        else:
            return MotionDirection(point=None, source=SOURCE_UNAVAILABLE, span=(i, j))
        return MotionDirection(
            point=(float(self.x[i, k]), float(self.y[i, k])), source=source, span=(i, j)
        )


def _prefix_sums(flows: Sequence[FlowGrid]) -> tuple[np.ndarray, np.ndarray]:
    vectors = np.stack([np.where(g.valid[:, None], g.vectors, 0.0) for g in flows])
    invalid = np.stack([~g.valid for g in flows]).astype(np.int64)
    vec_prefix = np.concatenate([np.zeros((1, *vectors.shape[1:])), np.cumsum(vectors, axis=0)])
    bad_prefix = np.concatenate([np.zeros((1, invalid.shape[1]), dtype=np.int64),
                                 np.cumsum(invalid, axis=0)])
    return vec_prefix, bad_prefix


def _batched_foe(
    mean_vectors: np.ndarray,
    all_valid: np.ndarray,
    points: np.ndarray,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """FOE of mean-integrated flow for a batch of spans, mirroring the
    scalar estimator: same exclusions, same normal equations."""
    k_count = mean_vectors.shape[0]
    norms = np.hypot(mean_vectors[..., 0], mean_vectors[..., 1])
    usable = all_valid & (norms >= epipolar.FOE_MIN_MAGNITUDE)
    counts = usable.sum(axis=1)

    with np.errstate(divide="ignore", invalid="ignore"):
        unit = mean_vectors / norms[..., None]
    nx = np.where(usable, -unit[..., 1], 0.0)
    ny = np.where(usable, unit[..., 0], 0.0)
    a00 = np.sum(nx * nx, axis=1)
    a01 = np.sum(nx * ny, axis=1)
    a11 = np.sum(ny * ny, axis=1)
    proj = nx * points[None, :, 0] + ny * points[None, :, 1]
    b0 = np.sum(nx * proj, axis=1)
    b1 = np.sum(ny * proj, axis=1)

    matrices = np.stack(
        [np.stack([a00, a01], axis=-1), np.stack([a01, a11], axis=-1)], axis=-2
    )
    eigs = np.linalg.eigvalsh(matrices)
    ok = counts >= epipolar.FOE_MIN_VECTORS
    with np.errstate(divide="ignore", invalid="ignore"):
        ok &= (eigs[:, 0] > 0) & (eigs[:, 1] / eigs[:, 0] <= epipolar.FOE_MAX_CONDITION)

    xs = np.full(k_count, np.nan)
    ys = np.full(k_count, np.nan)
    if ok.any():
        rhs = np.stack([b0, b1], axis=-1)[ok][..., None]
        solved = np.linalg.solve(matrices[ok], rhs)[..., 0]
        xs[ok] = solved[:, 0] - width / 2.0
        ys[ok] = solved[:, 1] - height / 2.0
    return xs, ys, ok


def build_direction_table(
    flows: Sequence[FlowGrid],
    grid: GridSpec,
    tau: int,
    mode: str,
    *,
    ransac_iterations: int = 500,
    inlier_threshold: float = 1.5,
    cache_path: Path | None = None,
) -> DirectionTable:
    """Motion direction for every pair (t, t+k), k <= tau.

    The FOE estimate is computed for all pairs in a batched pass; in
    "epipolar" mode the chained-correspondence fundamental-matrix path is
    tried per pair and overrides the FOE wherever it succeeds.
    """
    n = len(flows) + 1
    width, height = flows[0].width, flows[0].height

    if cache_path is not None and Path(cache_path).exists():
        table = DirectionTable(
            x=np.full((n, tau), np.nan),
            y=np.full((n, tau), np.nan),
            source=np.full((n, tau), -1, dtype=np.int8),
        )
        for d in epipolar.read_direction_cache(cache_path):
            t, k = d.span[0], d.span[1] - d.span[0]
            if t >= n or k > tau:
                continue
            table.source[t, k - 1] = _SRC_CODE[d.source]
            if d.point is not None:
                table.x[t, k - 1] = d.point[0]
                table.y[t, k - 1] = d.point[1]
        return table

    anchors = flows[0].points
    vec_prefix, bad_prefix = _prefix_sums(flows)

    dir_x = np.full((n, tau), np.nan)
    dir_y = np.full((n, tau), np.nan)
    source = np.full((n, tau), -1, dtype=np.int8)

    for t in range(n - 1):
        k_max = min(tau, n - 1 - t)
        sums = vec_prefix[t + 1 : t + 1 + k_max] - vec_prefix[t]
        all_valid = (bad_prefix[t + 1 : t + 1 + k_max] - bad_prefix[t]) == 0
        means = sums / np.arange(1, k_max + 1)[:, None, None]
        xs, ys, ok = _batched_foe(means, all_valid, anchors, width, height)
        dir_x[t, :k_max] = xs
        dir_y[t, :k_max] = ys
        source[t, :k_max] = np.where(ok, _SRC_CODE[SOURCE_FOE], _SRC_CODE[SOURCE_UNAVAILABLE])

    if mode == "epipolar":
        for t in range(n - 1):
            k_max = min(tau, n - 1 - t)
            positions = anchors.copy()
            alive = np.ones(len(anchors), dtype=bool)
            for k in range(1, k_max + 1):
                positions[alive], step_alive = epipolar._interpolated_step(
                    positions[alive], flows[t + k - 1], grid
                )
                alive[np.flatnonzero(alive)[~step_alive]] = False
                if int(alive.sum()) < 8:
                    break
                corr = epipolar.Correspondences(
                    points_a=anchors[alive], points_b=positions[alive]
                )
                try:
                    fundamental = epipolar.estimate_fundamental_ransac(
                        corr,
                        iterations=ransac_iterations,
                        inlier_threshold=inlier_threshold,
                        seed=epipolar.pair_seed(t, k),
                    )
                    point = epipolar.epipole_from_f(fundamental, width, height)
                except EstimationFailure:
                    continue
                dir_x[t, k - 1], dir_y[t, k - 1] = point
                source[t, k - 1] = _SRC_CODE[SOURCE_EPIPOLE]

    table = DirectionTable(x=dir_x, y=dir_y, source=source)
    if cache_path is not None:
        records = []
        for t in range(n - 1):
            for k in range(1, min(tau, n - 1 - t) + 1):
                records.append(table.direction(t, t + k))
        epipolar.write_direction_cache(cache_path, records)
    return table


def build_velocity_magnitudes(flows: Sequence[FlowGrid], tau: int) -> np.ndarray:
    """Mean magnitude of the sum-integrated flow for every pair; NaN where
    no anchor is valid across the whole span."""
    n = len(flows) + 1
    vec_prefix, bad_prefix = _prefix_sums(flows)
    magnitudes = np.full((n, tau), np.nan)
    for t in range(n - 1):
        k_max = min(tau, n - 1 - t)
        sums = vec_prefix[t + 1 : t + 1 + k_max] - vec_prefix[t]
        all_valid = (bad_prefix[t + 1 : t + 1 + k_max] - bad_prefix[t]) == 0
        norms = np.hypot(sums[..., 0], sums[..., 1])
        counts = all_valid.sum(axis=1)
        totals = np.sum(np.where(all_valid, norms, 0.0), axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            means = totals / counts
        magnitudes[t, :k_max] = np.where(counts > 0, means, np.nan)
    return magnitudes


def build_appearance_table(histograms: np.ndarray | None, n: int, tau: int) -> np.ndarray:
    """Per-pair histogram transport cost; zero when no frames are available
    (flow-injection runs carry no appearance signal)."""
    table = np.zeros((n, tau))
    if histograms is None:
        return table
    cdfs = np.cumsum(histograms, axis=2)
    bins = histograms.shape[2]
    for t in range(n - 1):
        k_max = min(tau, n - 1 - t)
        diffs = np.abs(cdfs[t + 1 : t + 1 + k_max] - cdfs[t])
        table[t, :k_max] = diffs.sum(axis=(1, 2)) / (bins - 1) / histograms.shape[1]
    return table


def build_cost_table(
    flows: Sequence[FlowGrid],
    histograms: np.ndarray | None,
    directions: DirectionTable,
    config: SamplingConfig,
) -> CostTable:
    n = len(flows) + 1
    tau = config.tau
    width, height = flows[0].width, flows[0].height
    norm = half_diagonal(width, height)

    offsets = np.hypot(directions.x, directions.y) / norm
    is_foe = directions.source == _SRC_CODE[SOURCE_FOE]
    available = is_foe | (directions.source == _SRC_CODE[SOURCE_EPIPOLE])
    shakiness = np.where(is_foe, offsets * config.c_foe, offsets)
    shakiness = np.where(available, shakiness, SENTINEL_COST)

    magnitudes = build_velocity_magnitudes(flows, tau)
    with np.errstate(invalid="ignore"):
        velocity = np.abs(magnitudes - config.k_flow) / config.k_flow
    velocity = np.where(np.isnan(magnitudes), SENTINEL_COST, velocity)

    appearance = build_appearance_table(histograms, n, tau)

    return CostTable.from_components(
        shakiness,
        velocity,
        appearance,
        config,
        width,
        height,
        dir_x=directions.x,
        dir_y=directions.y,
        dir_source=directions.source.astype(np.int8),
    )


# --- Command implementations ---


@dataclass
class FastForwardResult:
    plan: SamplePlan
    metrics: PlanMetrics | None
    out_dir: Path
    plan_path: Path
    metrics_path: Path | None


def _load_importance(path: Path, n: int) -> np.ndarray:
    values = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        try:
            values.append(float(line))
        except ValueError as exc:
            raise PipelineInputError(
                f"importance file {path}: bad value on line {line_no}"
            ) from exc
    if len(values) != n:
        raise PipelineInputError(
            f"importance file {path} has {len(values)} values, need {n}"
        )
    deltas = np.asarray(values)
    if np.any(deltas < 0):
        raise PipelineInputError(f"importance file {path}: penalties must be >= 0")
    return deltas


def _transition_directions(
    plan: SamplePlan, table: DirectionTable
) -> list[MotionDirection]:
    return [table.direction(i, j) for i, j in zip(plan.frames[:-1], plan.frames[1:])]


def _shift_plan(plan: SamplePlan, offset: int) -> SamplePlan:
    """Translate stream-relative indices back to original input numbering."""
    if offset == 0:
        return plan
    transitions = [
        TransitionCosts(
            i=tc.i + offset,
            j=tc.j + offset,
            shakiness=tc.shakiness,
            velocity=tc.velocity,
            appearance=tc.appearance,
            weight=tc.weight,
            direction=MotionDirection(
                point=tc.direction.point,
                source=tc.direction.source,
                span=(tc.direction.span[0] + offset, tc.direction.span[1] + offset),
            ),
        )
        for tc in plan.transitions
    ]
    return SamplePlan(
        frames=[f + offset for f in plan.frames],
        total_cost=plan.total_cost,
        transitions=transitions,
        config=plan.config,
    )


def _write_plan(path: Path, plan: SamplePlan, extra: dict) -> None:
    payload = plan.to_dict()
    payload.update(extra)
    atomic_write_text(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_metrics_csv(
    path: Path, sequence_id: str, mode: str, order: str, metrics: PlanMetrics
) -> None:
    lines = [",".join(metrics_mod.METRICS_FIELDS)]
    lines.append(",".join(metrics_row(sequence_id, mode, order, metrics)))
    atomic_write_text(path, "\n".join(lines) + "\n")


def run_fastforward(cfg: RunConfig) -> FastForwardResult:
    """Flows -> direction table -> cost graph -> shortest path -> artifacts."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows, histograms, n = load_or_compute_flows(cfg, need_histograms=True)
    tau = min(cfg.tau, n - 1)

    if cfg.k_flow is not None:
        k_flow = cfg.k_flow
    else:
        stats = flow_mod.sequence_flow_statistics(flows)
        if stats.mean_magnitude is None or stats.mean_magnitude <= 0:
            raise PipelineInputError(
                "cannot derive flow target: no valid flow in the sequence"
            )
        k_flow = cfg.speedup * stats.mean_magnitude
    config = cfg.sampling_config(k_flow)
    if tau < config.tau:
        config = SamplingConfig(**{**config.to_dict(), "tau": tau})

    directions = build_direction_table(
        flows,
        cfg.grid(),
        config.tau,
        cfg.mode,
        ransac_iterations=cfg.ransac_iterations,
        inlier_threshold=cfg.inlier_threshold,
        cache_path=cfg.direction_cache,
    )
    table = build_cost_table(flows, histograms, directions, config)
    if cfg.order == "second":
        graph = build_second_order_graph(n, table, config)
    else:
        graph = build_first_order_graph(n, table, config)
    if cfg.importance is not None:
        graph = apply_importance_bias(graph, _load_importance(Path(cfg.importance), n))
    plan = shortest_path(graph)

    factor = max(1, int(round(cfg.speedup)))
    metrics: PlanMetrics | None = None
    if factor <= config.tau and len(plan.frames) >= 3:
        baseline = metrics_mod.uniform_plan(n, factor)
        try:
            metrics = compute_plan_metrics(
                plan,
                _transition_directions(plan, directions),
                baseline,
                _transition_directions(baseline, directions),
                input_frames=n,
            )
        except ValueError:
            metrics = None

    # artifacts report original input frame numbers even under --range
    offset = cfg.frame_range[0] if cfg.frame_range is not None else 0
    output_plan = _shift_plan(plan, offset)
    plan_path = out_dir / "plan.json"
    _write_plan(
        plan_path,
        output_plan,
        {
            "input_frames": n,
            "speedup_target": cfg.speedup,
            "sequence_id": cfg.label(),
            "frame_range": None if cfg.frame_range is None else list(cfg.frame_range),
        },
    )
    metrics_path = None
    if metrics is not None:
        metrics_path = out_dir / "metrics.csv"
        _write_metrics_csv(metrics_path, cfg.label(), cfg.mode, cfg.order, metrics)
    if cfg.costs_csv:
        table.to_csv(out_dir / "costs.csv")
    if cfg.figures:
        from steadyskip import report

        report.save_plan_figure(output_plan, n,
                                directions=_transition_directions(plan, directions),
                                path=out_dir / "plan.png")
    if cfg.render and cfg.input is not None:
        _render_selected(cfg, output_plan.frames, out_dir / "frames")
    return FastForwardResult(
        plan=output_plan,
        metrics=metrics,
        out_dir=out_dir,
        plan_path=plan_path,
        metrics_path=metrics_path,
    )


def _render_selected(cfg: RunConfig, selected: Sequence[int], directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    wanted = {int(f) for f in selected}
    position = 0
    for frame in open_frame_source(cfg.input, cfg.frame_range):
        if frame.index in wanted:
            write_ppm(directory / f"out_{position:06d}.ppm", frame.data)
            position += 1


@dataclass
class StereoResult:
    pairs: StereoPairs
    extrema: SwayExtrema
    out_dir: Path
    pairs_path: Path
    anaglyph_paths: list[Path]
    warning: str | None = None


def run_stereo(cfg: RunConfig) -> StereoResult:
    """Flows -> sway curve -> extrema -> pairs -> anaglyph composites."""
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    flows, _, n = load_or_compute_flows(cfg, need_histograms=False)
    curve = flow_mod.cumulative_x_shift(flows)
    extrema = detect_sway_extrema(curve, cfg.smooth_window, cfg.prominence)

    warning = None
    if extrema.right_peaks and extrema.left_peaks:
        pairs = pair_stereo_frames(extrema)
    else:
        pairs = StereoPairs(pairs=[])
        warning = "no sway extrema of both polarities found; no stereo pairs"
    if cfg.swap_eyes:
        pairs = StereoPairs(pairs=[(b, a) for a, b in pairs.pairs])

    # report original input frame numbers even under --range
    offset = cfg.frame_range[0] if cfg.frame_range is not None else 0
    if offset:
        pairs = StereoPairs(pairs=[(a + offset, b + offset) for a, b in pairs.pairs])

    payload = {
        "pairs": pairs.to_dict()["pairs"],
        "right_peaks": [p + offset for p in extrema.right_peaks],
        "left_peaks": [p + offset for p in extrema.left_peaks],
        "smooth_window": cfg.smooth_window,
        "prominence": cfg.prominence,
        "swap_eyes": cfg.swap_eyes,
        "input_frames": n,
    }
    pairs_path = out_dir / "stereo_pairs.json"
    atomic_write_text(pairs_path, json.dumps(payload, sort_keys=True, indent=2) + "\n")

    anaglyph_paths: list[Path] = []
    if pairs.pairs and cfg.input is not None:
        needed = sorted({f for pair in pairs.pairs for f in pair})
        frames: dict[int, Frame] = {}
        for frame in open_frame_source(cfg.input, cfg.frame_range):
            if frame.index in needed:
                frames[frame.index] = frame
        for idx, (left_frame, right_frame) in enumerate(pairs.pairs):
            if left_frame not in frames or right_frame not in frames:
                continue
            composite = compose_anaglyph(frames[left_frame], frames[right_frame])
            path = out_dir / f"anaglyph_{idx}_{left_frame}_{right_frame}.ppm"
            write_ppm(path, composite.data)
            anaglyph_paths.append(path)
            if cfg.side_by_side:
                sbs = compose_side_by_side(frames[left_frame], frames[right_frame])
                write_ppm(out_dir / f"sidebyside_{idx}_{left_frame}_{right_frame}.ppm", sbs.data)

    if cfg.figures:
        from steadyskip import report

        report.save_sway_figure(curve, extrema, cfg.smooth_window, out_dir / "sway.png")
    return StereoResult(
        pairs=pairs,
        extrema=extrema,
        out_dir=out_dir,
        pairs_path=pairs_path,
        anaglyph_paths=anaglyph_paths,
        warning=warning,
    )


def load_plan(path: Path) -> tuple[SamplePlan, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    config = None
    if payload.get("config"):
        config = SamplingConfig(**payload["config"])
    plan = SamplePlan(
        frames=[int(f) for f in payload["frames"]],
        total_cost=payload.get("total_cost"),
        transitions=[],
        config=config,
    )
    return plan, payload


def run_metrics(cfg: RunConfig) -> tuple[PlanMetrics, Path]:
    """Evaluate an existing plan against the uniform baseline."""
    if cfg.plan is None:
        raise PipelineInputError("metrics needs --plan pointing at a plan JSON")
    plan, payload = load_plan(cfg.plan)
    if cfg.frame_range is None and payload.get("frame_range"):
        cfg = replace_config(cfg, frame_range=tuple(payload["frame_range"]))
    offset = cfg.frame_range[0] if cfg.frame_range is not None else 0
    plan = _shift_plan(plan, -offset)
    flows, _, n = load_or_compute_flows(cfg, need_histograms=False)
    if payload.get("input_frames") not in (None, n):
        raise PipelineInputError(
            f"plan was built for {payload['input_frames']} frames, input has {n}"
        )
    tau = plan.config.tau if plan.config is not None else cfg.tau
    mode = plan.config.mode if plan.config is not None else cfg.mode
    factor = max(1, int(round(cfg.speedup)))
    needed_tau = min(max(tau, factor), n - 1)
    directions = build_direction_table(
        flows,
        cfg.grid(),
        needed_tau,
        mode,
        ransac_iterations=cfg.ransac_iterations,
        inlier_threshold=cfg.inlier_threshold,
        cache_path=cfg.direction_cache,
    )
    baseline = metrics_mod.uniform_plan(n, factor)
    metrics = compute_plan_metrics(
        plan,
        _transition_directions(plan, directions),
        baseline,
        _transition_directions(baseline, directions),
        input_frames=n,
    )
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    order = plan.config.order if plan.config is not None else cfg.order
    path = out_dir / "metrics.csv"
    _write_metrics_csv(path, cfg.label(), mode, order, metrics)
    if cfg.figures:
        from steadyskip import report

        report.save_direction_comparison(
            _transition_directions(plan, directions),
            _transition_directions(baseline, directions),
            out_dir / "directions.png",
        )
    return metrics, path


def run_render(cfg: RunConfig) -> Path:
    if cfg.plan is None:
        raise PipelineInputError("render needs --plan pointing at a plan JSON")
    if cfg.input is None:
        raise PipelineInputError("render needs --input frames")
    plan, _ = load_plan(cfg.plan)
    out_dir = Path(cfg.out)
    _render_selected(cfg, plan.frames, out_dir)
    return out_dir


def run_synth(cfg: RunConfig) -> SyntheticSequence:
    """Generate a synthetic walking scene and export its artifacts."""
    saccades: list[tuple[int, float, int]] = []
    if cfg.saccade_every > 0:
        angle = cfg.saccade_angle
        for idx, start in enumerate(range(cfg.saccade_every, cfg.frames, cfg.saccade_every)):
            target = angle if idx % 2 == 0 else -angle
            saccades.append((start, target, cfg.saccade_duration))
    params = WalkSceneParams(
        frame_count=cfg.frames,
        width=cfg.width,
        height=cfg.height,
        forward_speed=cfg.speed,
        sway_amplitude=cfg.sway_amp,
        sway_period=cfg.sway_period,
        yaw_amplitude=cfg.yaw_amp,
        yaw_period=cfg.yaw_period,
        saccades=tuple(saccades),
        point_count=cfg.points,
        depth_range=(cfg.depth_min, cfg.depth_max),
        noise_sigma=cfg.noise,
        seed=cfg.seed,
    )
    seq = generate_walk_scene(params, cfg.grid())
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seq.write_flow_cache(out_dir / "flows.jsonl")
    seq.write_ground_truth(out_dir / "ground_truth.json", max_skip=cfg.max_skip_truth)
    if cfg.render:
        seq.write_frames(out_dir / "frames")
    if cfg.figures:
        from steadyskip import report

        extrema = detect_sway_extrema(seq.sway_curve, cfg.smooth_window, cfg.prominence)
        report.save_sway_figure(seq.sway_curve, extrema, cfg.smooth_window, out_dir / "sway.png")
    return seq
