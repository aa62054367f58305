"""Transition costs, sampling graphs, and the shortest-path solver.

Every candidate transition (i, j) with 1 <= j - i <= tau carries three
normalized costs — shakiness S (motion-direction offset from the image
center), velocity V (accumulated flow magnitude against the target), and
appearance C (color-histogram transport distance) — combined into the edge
weight W = alpha*S + beta*V + gamma*C.  The optimal frame sequence is the
minimum-weight source-to-sink path, solved by dynamic programming in
topological order (all edges point forward in frame index, all weights are
non-negative).  The second-order variant puts nodes on frame *pairs* and
additionally penalizes the change of the motion direction between
consecutive output transitions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from steadyskip.epipolar import (
    SOURCE_EPIPOLE,
    SOURCE_FOE,
    SOURCE_UNAVAILABLE,
    MotionDirection,
)
from steadyskip.ingest import Frame

SENTINEL_COST = 10.0  # finite but dominating any in-image normalized cost
HISTOGRAM_BINS = 32

_SRC_EPIPOLE = 0
_SRC_FOE = 1
_SRC_UNAVAILABLE = 2
_SOURCE_NAMES = {
    _SRC_EPIPOLE: SOURCE_EPIPOLE,
    _SRC_FOE: SOURCE_FOE,
    _SRC_UNAVAILABLE: SOURCE_UNAVAILABLE,
}
_SOURCE_CODES = {name: code for code, name in _SOURCE_NAMES.items()}


class InfeasibleGraphError(RuntimeError):
    """No source-to-sink path exists under the configured skip bounds."""


@dataclass(frozen=True)
class SamplingConfig:
    """Solver parameters; defaults mirror the published working point."""

    alpha: float = 1000.0
    beta: float = 200.0
    gamma: float = 3.0
    c_foe: float = 4.0
    tau: int = 100
    d_start: int = 120
    d_end: int = 120
    k_flow: float = 1.0
    eta: float = 1.0
    mode: str = "epipolar"
    order: str = "first"

    def __post_init__(self) -> None:
        if self.tau < 1:
            raise ValueError("tau must be >= 1")
        if self.d_start < 0 or self.d_end < 0:
            raise ValueError("d_start and d_end must be >= 0")
        if not self.k_flow > 0:
            raise ValueError("k_flow must be > 0")
        for name in ("alpha", "beta", "gamma", "c_foe", "eta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.mode not in ("epipolar", "foe-only"):
            raise ValueError(f"mode must be 'epipolar' or 'foe-only', got {self.mode!r}")
        if self.order not in ("first", "second"):
            raise ValueError(f"order must be 'first' or 'second', got {self.order!r}")

    @classmethod
    def defaults(cls, mode: str = "epipolar", **overrides) -> "SamplingConfig":
        """Per-mode weight defaults: epipolar alpha=1000, beta=200; the
        FOE-only working point drops them to alpha=3, beta=10."""
        base = dict(alpha=1000.0, beta=200.0) if mode == "epipolar" else dict(
            alpha=3.0, beta=10.0
        )
        base.update(mode=mode)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "gamma": self.gamma,
            "c_foe": self.c_foe,
            "tau": self.tau,
            "d_start": self.d_start,
            "d_end": self.d_end,
            "k_flow": self.k_flow,
            "eta": self.eta,
            "mode": self.mode,
            "order": self.order,
        }


@dataclass
class TransitionCosts:
    i: int
    j: int
    shakiness: float
    velocity: float
    appearance: float
    weight: float
    direction: MotionDirection


@dataclass
class Histogram:
    """Per-channel 32-bin color distribution, each channel L1-normalized."""

    bins: np.ndarray  # (3, 32)


@dataclass
class SamplePlan:
    """Solver output: strictly increasing selected frames plus diagnostics."""

    frames: list[int]
    total_cost: float | None
    transitions: list[TransitionCosts]
    config: SamplingConfig | None

    def to_dict(self) -> dict:
        transitions = [
            {
                "i": tc.i,
                "j": tc.j,
                "shakiness": tc.shakiness,
                "velocity": tc.velocity,
                "appearance": tc.appearance,
                "weight": tc.weight,
                "direction_source": tc.direction.source,
                "direction_x": None if tc.direction.point is None else tc.direction.point[0],
                "direction_y": None if tc.direction.point is None else tc.direction.point[1],
            }
            for tc in self.transitions
        ]
        return {
            "frames": list(self.frames),
            "total_cost": self.total_cost,
            "transitions": transitions,
            "config": None if self.config is None else self.config.to_dict(),
        }


def half_diagonal(width: int, height: int) -> float:
    return float(np.hypot(width, height)) / 2.0


# --- Scalar cost terms ---


def shakiness_cost(
    direction: MotionDirection, width: int, height: int, config: SamplingConfig
) -> float:
    """Distance of the motion direction from the image center, in units of
    the half image diagonal; multiplied by ``c_foe`` for FOE-sourced
    directions, sentinel when unavailable."""
    if direction.source == SOURCE_UNAVAILABLE or direction.point is None:
        return SENTINEL_COST
    value = float(np.hypot(*direction.point)) / half_diagonal(width, height)
    if direction.source == SOURCE_FOE:
        value *= config.c_foe
    return value


def velocity_cost(magnitude: float | None, config: SamplingConfig) -> float:
    """Relative deviation of the accumulated flow magnitude from the
    target; sentinel when flow is unavailable."""
    if magnitude is None:
        return SENTINEL_COST
    return abs(magnitude - config.k_flow) / config.k_flow


def color_histogram(frame: Frame) -> Histogram:
    """Per-channel histogram over 32 uniform bins of [0, 255], L1-normalized."""
    pixels = frame.data.reshape(-1, 3)
    bins = np.zeros((3, HISTOGRAM_BINS))
    for channel in range(3):
        counts = np.bincount(pixels[:, channel] >> 3, minlength=HISTOGRAM_BINS)
        bins[channel] = counts / pixels.shape[0]
    return Histogram(bins=bins)


def appearance_cost(h1: Histogram, h2: Histogram) -> float:
    """1-D transport distance between color histograms, averaged over the
    three channels and normalized to [0, 1].

    For histograms on a line the optimal transport cost equals the summed
    absolute difference of the cumulative distributions; dividing by
    bins - 1 makes total mass moved across the full range cost 1.
    """
    cdf1 = np.cumsum(h1.bins, axis=1)
    cdf2 = np.cumsum(h2.bins, axis=1)
    per_channel = np.sum(np.abs(cdf1 - cdf2), axis=1) / (HISTOGRAM_BINS - 1)
    return float(np.mean(per_channel))


def edge_weight(s: float, v: float, c: float, config: SamplingConfig) -> float:
    return config.alpha * s + config.beta * v + config.gamma * c


def second_order_shakiness(
    e_prev: MotionDirection,
    e_next: MotionDirection,
    width: int,
    height: int,
    config: SamplingConfig,
) -> float:
    """Shakiness of a frame triplet: the offset of the new transition's
    direction plus ``eta`` times its change from the previous transition's,
    normalized by the half image diagonal.

    The FOE confidence penalty multiplies each term that depends on an
    FOE-sourced direction (the variation term when either endpoint is FOE).
    Sentinel when either direction is unavailable.
    """
    if (
        e_prev.source == SOURCE_UNAVAILABLE
        or e_next.source == SOURCE_UNAVAILABLE
        or e_prev.point is None
        or e_next.point is None
    ):
        return SENTINEL_COST
    offset = float(np.hypot(*e_next.point))
    if e_next.source == SOURCE_FOE:
        offset *= config.c_foe
    variation = float(
        np.hypot(e_next.point[0] - e_prev.point[0], e_next.point[1] - e_prev.point[1])
    )
    if e_next.source == SOURCE_FOE or e_prev.source == SOURCE_FOE:
        variation *= config.c_foe
    return (offset + config.eta * variation) / half_diagonal(width, height)


# --- Cost table ---


@dataclass
class CostTable:
    """Dense per-pair cost arrays; entry [i, k] describes edge (i, i+k+1).

    Entries with i+k+1 >= n are padding and hold NaN / source code -1.
    """

    n: int
    tau: int
    width: int
    height: int
    shakiness: np.ndarray
    velocity: np.ndarray
    appearance: np.ndarray
    weight: np.ndarray
    dir_x: np.ndarray
    dir_y: np.ndarray
    dir_source: np.ndarray  # int8 codes; see _SOURCE_NAMES

    @classmethod
    def from_components(
        cls,
        shakiness: np.ndarray,
        velocity: np.ndarray,
        appearance: np.ndarray,
        config: SamplingConfig,
        width: int,
        height: int,
        dir_x: np.ndarray | None = None,
        dir_y: np.ndarray | None = None,
        dir_source: np.ndarray | None = None,
    ) -> "CostTable":
        n, tau = shakiness.shape
        shakiness = shakiness.astype(np.float64, copy=True)
        velocity = velocity.astype(np.float64, copy=True)
        appearance = appearance.astype(np.float64, copy=True)
        weight = config.alpha * shakiness + config.beta * velocity + config.gamma * appearance
        if dir_x is None:
            dir_x = np.full((n, tau), np.nan)
            dir_y = np.full((n, tau), np.nan)
            dir_source = np.full((n, tau), _SRC_UNAVAILABLE, dtype=np.int8)
        mask = _in_range_mask(n, tau)
        for array in (weight, shakiness, velocity, appearance):
            array[~mask] = np.nan
        dir_source = dir_source.copy()
        dir_source[~mask] = -1
        return cls(
            n=n,
            tau=tau,
            width=width,
            height=height,
            shakiness=shakiness,
            velocity=velocity,
            appearance=appearance,
            weight=weight,
            dir_x=dir_x,
            dir_y=dir_y,
            dir_source=dir_source,
        )

    def direction(self, i: int, j: int) -> MotionDirection:
        k = j - i - 1
        code = int(self.dir_source[i, k])
        if code == _SRC_UNAVAILABLE or code < 0:
            return MotionDirection(point=None, source=SOURCE_UNAVAILABLE, span=(i, j))
        return MotionDirection(
            point=(float(self.dir_x[i, k]), float(self.dir_y[i, k])),
            source=_SOURCE_NAMES[code],
            span=(i, j),
        )

    def transition(self, i: int, j: int) -> TransitionCosts:
        k = j - i - 1
        if not 0 <= k < self.tau or j >= self.n:
            raise ValueError(f"pair ({i}, {j}) outside table range")
        return TransitionCosts(
            i=i,
            j=j,
            shakiness=float(self.shakiness[i, k]),
            velocity=float(self.velocity[i, k]),
            appearance=float(self.appearance[i, k]),
            weight=float(self.weight[i, k]),
            direction=self.direction(i, j),
        )

    def to_csv(self, path: Path | str) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                ["i", "j", "shakiness", "velocity", "appearance", "weight",
                 "direction_source", "direction_x", "direction_y"]
            )
            for i in range(self.n):
                for k in range(min(self.tau, self.n - 1 - i)):
                    direction = self.direction(i, i + k + 1)
                    writer.writerow(
                        [
                            i,
                            i + k + 1,
                            repr(float(self.shakiness[i, k])),
                            repr(float(self.velocity[i, k])),
                            repr(float(self.appearance[i, k])),
                            repr(float(self.weight[i, k])),
                            direction.source,
                            "" if direction.point is None else repr(direction.point[0]),
                            "" if direction.point is None else repr(direction.point[1]),
                        ]
                    )


def _in_range_mask(n: int, tau: int) -> np.ndarray:
    i = np.arange(n)[:, None]
    k = np.arange(tau)[None, :]
    return i + k + 1 < n


def source_codes(sources: Sequence[str]) -> np.ndarray:
    return np.array([_SOURCE_CODES[s] for s in sources], dtype=np.int8)


# --- Graphs ---


@dataclass
class FirstOrderGraph:
    n: int
    tau: int
    d_start: int
    d_end: int
    weights: np.ndarray  # (n, tau); +inf past the last frame
    in_bias: np.ndarray
    out_bias: np.ndarray
    table: CostTable
    config: SamplingConfig

    def node_count(self) -> int:
        return self.n + 2  # frames plus source and sink

    def interior_edge_count(self) -> int:
        i = np.arange(self.n)
        return int(np.minimum(self.tau, self.n - 1 - i).clip(min=0).sum())

    def edge_count(self) -> int:
        source_edges = min(self.d_start, self.n - 1) + 1
        sink_edges = self.n - max(self.n - 1 - self.d_end, 0)
        return self.interior_edge_count() + source_edges + sink_edges


@dataclass
class SecondOrderGraph:
    n: int
    tau: int
    d_start: int
    d_end: int
    velocity: np.ndarray
    appearance: np.ndarray
    dir_x: np.ndarray
    dir_y: np.ndarray
    dir_source: np.ndarray
    in_bias: np.ndarray
    out_bias: np.ndarray
    table: CostTable
    config: SamplingConfig
    width: int
    height: int

    def _pairs_per_first(self) -> np.ndarray:
        i = np.arange(self.n)
        return np.minimum(self.tau, self.n - 1 - i).clip(min=0)

    def node_count(self) -> int:
        return int(self._pairs_per_first().sum()) + 2

    def interior_edge_count(self) -> int:
        # edges (i, j) -> (j, l): predecessors ending at j times successors starting at j
        j = np.arange(self.n)
        preds = np.minimum(self.tau, j)
        succs = np.minimum(self.tau, self.n - 1 - j).clip(min=0)
        return int(np.sum(preds * succs))

    def edge_count(self) -> int:
        per_first = self._pairs_per_first()
        source_edges = int(per_first[: min(self.d_start, self.n - 1) + 1].sum())
        j = np.arange(self.n)
        preds = np.minimum(self.tau, j)
        sink_edges = int(preds[max(self.n - 1 - self.d_end, 0) :].sum())
        return self.interior_edge_count() + source_edges + sink_edges


def _validate_feasibility(n: int, config: SamplingConfig) -> None:
    if n < 2:
        raise InfeasibleGraphError("need at least two frames")
    if n <= config.d_start + config.d_end:
        raise InfeasibleGraphError(
            f"no feasible path: {n} frames <= d_start + d_end "
            f"({config.d_start} + {config.d_end})"
        )


def build_first_order_graph(
    n: int, table: CostTable, config: SamplingConfig
) -> FirstOrderGraph:
    """Graph with one node per frame, forward edges for skips in [1, tau],
    and zero-weight source/sink edges for the start/end skip allowance."""
    _validate_feasibility(n, config)
    if table.n < n or table.tau < config.tau:
        raise ValueError(
            f"cost table covers ({table.n}, {table.tau}); need ({n}, {config.tau})"
        )
    weights = np.full((n, config.tau), np.inf)
    mask = _in_range_mask(n, config.tau)
    weights[mask] = table.weight[:n, : config.tau][mask]
    in_range = weights[mask]
    if not np.all(np.isfinite(in_range)) or np.any(in_range < 0):
        raise ValueError("edge weights must be finite and non-negative")
    return FirstOrderGraph(
        n=n,
        tau=config.tau,
        d_start=config.d_start,
        d_end=config.d_end,
        weights=weights,
        in_bias=np.zeros(n),
        out_bias=np.zeros(n),
        table=table,
        config=config,
    )


def build_second_order_graph(
    n: int, table: CostTable, config: SamplingConfig
) -> SecondOrderGraph:
    """Graph with one node per frame pair (i, j), j - i in [1, tau].

    An edge joins (i, j) to (j, l) and charges the second-order shakiness
    of the triplet plus the velocity and appearance of the newly introduced
    transition (j, l).  Source feeds every pair with i <= d_start; every
    pair with j >= n-1-d_end reaches the sink.
    """
    _validate_feasibility(n, config)
    if table.n < n or table.tau < config.tau:
        raise ValueError(
            f"cost table covers ({table.n}, {table.tau}); need ({n}, {config.tau})"
        )
    tau = config.tau
    mask = _in_range_mask(n, tau)
    for name in ("velocity", "appearance"):
        values = getattr(table, name)[:n, :tau][mask]
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError(f"{name} costs must be finite and non-negative")
    return SecondOrderGraph(
        n=n,
        tau=tau,
        d_start=config.d_start,
        d_end=config.d_end,
        velocity=table.velocity[:n, :tau],
        appearance=table.appearance[:n, :tau],
        dir_x=table.dir_x[:n, :tau],
        dir_y=table.dir_y[:n, :tau],
        dir_source=table.dir_source[:n, :tau],
        in_bias=np.zeros(n),
        out_bias=np.zeros(n),
        table=table,
        config=config,
        width=table.width,
        height=table.height,
    )


def apply_importance_bias(
    graph: FirstOrderGraph | SecondOrderGraph,
    delta: Sequence[float],
    side: str = "incoming",
) -> FirstOrderGraph | SecondOrderGraph:
    """Return a copy with per-frame penalties added to every incoming (or
    outgoing, but not both) edge of each frame's node — for pair graphs,
    of every pair node whose second frame is that frame."""
    delta = np.asarray(delta, dtype=np.float64)
    if len(delta) != graph.n:
        raise ValueError(f"delta must have length {graph.n}, got {len(delta)}")
    if np.any(delta < 0):
        raise ValueError("importance penalties must be >= 0")
    if side not in ("incoming", "outgoing"):
        raise ValueError("side must be 'incoming' or 'outgoing'")
    if side == "incoming":
        return replace(graph, in_bias=graph.in_bias + delta)
    return replace(graph, out_bias=graph.out_bias + delta)


# --- Shortest path ---


def _solve_first_order(graph: FirstOrderGraph) -> tuple[list[int], float]:
    n, tau = graph.n, graph.tau
    dist = np.full(n, np.inf)
    parent = np.full(n, -2, dtype=np.int64)
    start_hi = min(graph.d_start, n - 1)
    dist[: start_hi + 1] = graph.in_bias[: start_hi + 1]
    parent[: start_hi + 1] = -1
    for j in range(1, n):
        lo = max(0, j - tau)
        preds = np.arange(lo, j)
        candidates = (
            dist[preds]
            + graph.weights[preds, j - preds - 1]
            + graph.out_bias[preds]
            + graph.in_bias[j]
        )
        best = int(np.argmin(candidates))  # first minimum: smallest predecessor
        if candidates[best] < dist[j]:
            dist[j] = candidates[best]
            parent[j] = preds[best]

    end_lo = max(0, n - 1 - graph.d_end)
    ends = np.arange(end_lo, n)
    final = dist[ends] + graph.out_bias[ends]
    best_end = int(np.argmin(final))
    if not np.isfinite(final[best_end]):
        raise InfeasibleGraphError("no source-to-sink path")
    total = float(final[best_end])
    frames = [int(ends[best_end])]
    while parent[frames[-1]] >= 0:
        frames.append(int(parent[frames[-1]]))
    return frames[::-1], total


def _solve_second_order(graph: SecondOrderGraph) -> tuple[list[int], float]:
    n, tau = graph.n, graph.tau
    config = graph.config
    norm = half_diagonal(graph.width, graph.height)
    dir_norm = np.hypot(graph.dir_x, graph.dir_y)
    is_foe = graph.dir_source == _SRC_FOE
    unavailable = graph.dir_source != _SRC_EPIPOLE
    unavailable &= graph.dir_source != _SRC_FOE

    # dist[j, k] is the best cost reaching pair node (j-k-1, j)
    dist = np.full((n, tau), np.inf)
    parent = np.full((n, tau), -2, dtype=np.int64)

    start_hi = min(graph.d_start, n - 2)
    for i in range(start_hi + 1):
        j_hi = min(i + tau, n - 1)
        js = np.arange(i + 1, j_hi + 1)
        ks = js - i - 1
        entry = graph.in_bias[js]
        better = entry < dist[js, ks]
        dist[js[better], ks[better]] = entry[better]
        parent[js[better], ks[better]] = -1

    for j in range(1, n - 1):
        kp = min(tau, j)
        i_arr = np.arange(j - kp, j)  # ascending predecessor frames
        pred_dist = dist[j, j - 1 - i_arr]
        reachable = np.isfinite(pred_dist)
        if not reachable.any():
            continue
        i_arr = i_arr[reachable]
        pred_dist = pred_dist[reachable]
        prev_x = graph.dir_x[i_arr, j - 1 - i_arr]
        prev_y = graph.dir_y[i_arr, j - 1 - i_arr]
        prev_foe = is_foe[i_arr, j - 1 - i_arr]
        prev_missing = unavailable[i_arr, j - 1 - i_arr]

        l_hi = min(j + tau, n - 1)
        ks_arr = np.arange(0, l_hi - j)
        l_arr = j + 1 + ks_arr
        next_x = graph.dir_x[j, ks_arr]
        next_y = graph.dir_y[j, ks_arr]
        next_foe = is_foe[j, ks_arr]
        next_missing = unavailable[j, ks_arr]
        offset = dir_norm[j, ks_arr] * np.where(next_foe, config.c_foe, 1.0)

        with np.errstate(invalid="ignore"):
            variation = np.hypot(
                next_x[None, :] - prev_x[:, None], next_y[None, :] - prev_y[:, None]
            )
        var_foe = prev_foe[:, None] | next_foe[None, :]
        variation = variation * np.where(var_foe, config.c_foe, 1.0)
        s2 = (offset[None, :] + config.eta * variation) / norm
        missing = prev_missing[:, None] | next_missing[None, :]
        s2 = np.where(missing, SENTINEL_COST, s2)

        edge = (
            config.alpha * s2
            + config.beta * graph.velocity[j, ks_arr][None, :]
            + config.gamma * graph.appearance[j, ks_arr][None, :]
            + graph.in_bias[l_arr][None, :]
            + graph.out_bias[j]
        )
        candidates = pred_dist[:, None] + edge
        best = np.argmin(candidates, axis=0)  # first minimum: smallest i
        values = candidates[best, np.arange(len(l_arr))]
        current = dist[l_arr, ks_arr]
        better = values < current
        dist[l_arr[better], ks_arr[better]] = values[better]
        parent[l_arr[better], ks_arr[better]] = i_arr[best[better]]

    end_lo = max(0, n - 1 - graph.d_end)
    best_total = np.inf
    best_node: tuple[int, int] | None = None
    for j in range(end_lo, n):
        kp = min(tau, j)
        i_arr = np.arange(j - kp, j)
        totals = dist[j, j - 1 - i_arr] + graph.out_bias[j]
        idx = int(np.argmin(totals))
        if totals[idx] < best_total:
            best_total = float(totals[idx])
            best_node = (int(i_arr[idx]), j)
    if best_node is None or not np.isfinite(best_total):
        raise InfeasibleGraphError("no source-to-sink path")

    i, j = best_node
    frames = [j, i]
    while True:
        prev = int(parent[j, j - i - 1])
        if prev < 0:
            break
        frames.append(prev)
        i, j = prev, i
    return frames[::-1], best_total


def shortest_path(graph: FirstOrderGraph | SecondOrderGraph) -> SamplePlan:
    """Minimum-total-weight source-to-sink path as a SamplePlan.

    Solved by a single dynamic-programming pass in topological order
    (equivalent to Dijkstra under non-negative weights); ties prefer the
    smaller predecessor frame index, making the result deterministic.
    """
    if isinstance(graph, FirstOrderGraph):
        frames, total = _solve_first_order(graph)
    elif isinstance(graph, SecondOrderGraph):
        frames, total = _solve_second_order(graph)
    else:
        raise TypeError(f"unsupported graph type {type(graph)!r}")
    transitions = [
        graph.table.transition(i, j) for i, j in zip(frames[:-1], frames[1:])
    ]
    return SamplePlan(
        frames=frames, total_cost=total, transitions=transitions, config=graph.config
    )
