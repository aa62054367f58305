"""Synthetic walking-camera sequences with exact ground truth.

The scene is a static box corridor (two side walls, floor, ceiling, and a
far end wall) traversed by a pinhole camera (focal length = image width)
that walks forward with sinusoidal lateral sway, sinusoidal yaw, and
optional scheduled gaze saccades.  Because every surface is a known plane,
the flow of any pixel, chained correspondences over any span, and the
motion direction between any two frames are all exact closed-form
projections — so estimators can be validated without real video and
without tracker noise (flow-injection mode).  Rendering textured frames is
optional and only needed to exercise the tracker itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from steadyskip import flow as flow_mod
from steadyskip.flow import FlowGrid, GridSpec, SwayCurve
from steadyskip.ingest import Frame, write_ppm

MIN_PERIOD = 4.0


@dataclass(frozen=True)
class WalkSceneParams:
    frame_count: int = 300
    width: int = 640
    height: int = 480
    forward_speed: float = 0.05  # world units per frame
    sway_amplitude: float = 0.05  # world units, lateral
    sway_period: float = 30.0  # frames
    yaw_amplitude: float = 0.0  # degrees
    yaw_period: float = 40.0  # frames
    saccades: tuple[tuple[int, float, int], ...] = ()  # (start frame, target deg, duration)
    point_count: int = 300
    depth_range: tuple[float, float] = (5.0, 50.0)
    noise_sigma: float = 0.0  # pixels, added to exact flow vectors
    seed: int = 0

    def __post_init__(self) -> None:
        if self.frame_count < 2:
            raise ValueError("need at least 2 frames")
        if self.sway_period < MIN_PERIOD or self.yaw_period < MIN_PERIOD:
            raise ValueError(f"oscillation periods must be >= {MIN_PERIOD} frames")
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise ValueError("depth range must be positive and increasing")
        if self.noise_sigma < 0:
            raise ValueError("noise sigma must be >= 0")
        if self.forward_speed < 0:
            raise ValueError("forward speed must be >= 0")


@dataclass
class CorridorGeometry:
    """Static box scene; the camera walks along +z inside it."""

    half_width: float
    half_height: float
    end_z: float


def _yaw_schedule(params: WalkSceneParams) -> np.ndarray:
    t = np.arange(params.frame_count, dtype=np.float64)
    yaw = np.deg2rad(params.yaw_amplitude) * np.sin(2 * np.pi * t / params.yaw_period)
    current = 0.0
    extra = np.zeros(params.frame_count)
    for start, target_deg, duration in sorted(params.saccades):
        target = np.deg2rad(target_deg)
        end = min(start + max(duration, 1), params.frame_count)
        ramp = np.arange(start, end)
        if len(ramp):
            # smooth monotone blend from the previous gaze target to the new one
            phase = (ramp - start + 1) / max(end - start, 1)
            blend = 0.5 - 0.5 * np.cos(np.pi * phase)
            extra[start:end] = current + (target - current) * blend
        extra[end:] = target
        current = target
    return yaw + extra


def _rotation_y(yaw: float | np.ndarray) -> np.ndarray:
    """Camera-to-world rotation for a yaw about the vertical axis.

    Axes: x right, y down, z forward; positive yaw turns the gaze toward +x.
    """
    c, s = np.cos(yaw), np.sin(yaw)
    zeros = np.zeros_like(c)
    ones = np.ones_like(c)
    rot = np.array([[c, zeros, s], [zeros, ones, zeros], [-s, zeros, c]])
    return np.moveaxis(rot, -1, 0) if np.ndim(c) else rot


@dataclass
class SyntheticSequence:
    params: WalkSceneParams
    grid: GridSpec
    geometry: CorridorGeometry
    positions: np.ndarray  # (n, 3) camera centers
    yaws: np.ndarray  # (n,) radians
    flow_grids: list[FlowGrid]
    sway_curve: SwayCurve
    point_cloud: np.ndarray  # (m, 3) on the corridor surfaces
    point_colors: np.ndarray  # (m, 3) uint8

    @property
    def frame_count(self) -> int:
        return self.params.frame_count

    @property
    def focal(self) -> float:
        return float(self.params.width)

    def direction(self, t: int, k: int) -> tuple[float, float]:
        return ground_truth_direction(
            self.positions, self.yaws, t, k, self.params.width, self.params.height
        )

    def render_frame(self, t: int) -> Frame:
        return _render_frame(self, t)

    def write_frames(self, directory: Path | str) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for t in range(self.frame_count):
            write_ppm(directory / f"frame_{t:06d}.ppm", self.render_frame(t).data)

    def write_flow_cache(self, path: Path | str) -> None:
        flow_mod.write_flow_cache(path, self.flow_grids)

    def write_ground_truth(self, path: Path | str, max_skip: int = 1) -> None:
        directions = []
        for t in range(self.frame_count - 1):
            for k in range(1, min(max_skip, self.frame_count - 1 - t) + 1):
                try:
                    x, y = self.direction(t, k)
                    directions.append({"t": t, "k": k, "x": x, "y": y})
                except ValueError:
                    directions.append({"t": t, "k": k, "x": None, "y": None})
        payload = {
            "frame_count": self.frame_count,
            "width": self.params.width,
            "height": self.params.height,
            "positions": self.positions.tolist(),
            "yaws": self.yaws.tolist(),
            "sway": self.sway_curve.values.tolist(),
            "directions": directions,
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")


# --- Geometry ---


def _camera_path(params: WalkSceneParams) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(params.frame_count, dtype=np.float64)
    x = params.sway_amplitude * np.sin(2 * np.pi * t / params.sway_period)
    positions = np.stack([x, np.zeros_like(x), params.forward_speed * t], axis=1)
    return positions, _yaw_schedule(params)


def _corridor(params: WalkSceneParams) -> CorridorGeometry:
    lo, hi = params.depth_range
    # side walls subtend the near end of the depth range at the image edge;
    # the end wall stays at least `hi` ahead of the final camera position
    half_width = 0.45 * lo
    half_height = half_width * params.height / params.width
    end_z = params.forward_speed * params.frame_count + hi
    if params.sway_amplitude >= half_width:
        raise ValueError("sway amplitude exceeds corridor half width")
    return CorridorGeometry(half_width=half_width, half_height=half_height, end_z=end_z)


def _ray_corridor_depth(
    origins: np.ndarray, rays: np.ndarray, geometry: CorridorGeometry
) -> np.ndarray:
    """Distance along each world ray to the nearest corridor plane."""
    s = np.full(rays.shape[0], np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        for axis, bound in ((0, geometry.half_width), (1, geometry.half_height)):
            for sign in (-1.0, 1.0):
                hit = (sign * bound - origins[:, axis]) / rays[:, axis]
                s = np.where((hit > 1e-9) & (hit < s), hit, s)
        hit = (geometry.end_z - origins[:, 2]) / rays[:, 2]
        s = np.where((hit > 1e-9) & (hit < s), hit, s)
    return s


def _pixel_rays(
    pixels: np.ndarray, yaw: float, width: int, height: int
) -> np.ndarray:
    focal = float(width)
    cam = np.stack(
        [
            (pixels[:, 0] - width / 2.0) / focal,
            (pixels[:, 1] - height / 2.0) / focal,
            np.ones(len(pixels)),
        ],
        axis=1,
    )
    return cam @ _rotation_y(yaw).T


def backproject(
    geometry: CorridorGeometry,
    pixels: np.ndarray,
    position: np.ndarray,
    yaw: float,
    width: int,
    height: int,
) -> np.ndarray:
    """World points where the pixel rays of one camera meet the corridor."""
    rays = _pixel_rays(np.asarray(pixels, dtype=np.float64), yaw, width, height)
    depth = _ray_corridor_depth(position[None, :], rays, geometry)
    return position[None, :] + depth[:, None] * rays


def project_points(
    points: np.ndarray,
    position: np.ndarray,
    yaw: float,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Pixel positions of world points in one camera, plus camera depths."""
    rotation = _rotation_y(yaw)
    local = (np.asarray(points, dtype=np.float64) - position[None, :]) @ rotation
    focal = float(width)
    with np.errstate(divide="ignore", invalid="ignore"):
        u = focal * local[:, 0] / local[:, 2] + width / 2.0
        v = focal * local[:, 1] / local[:, 2] + height / 2.0
    return np.stack([u, v], axis=1), local[:, 2]


def advance_points_exact(
    seq: SyntheticSequence, pixels: np.ndarray, t: int, k: int
) -> np.ndarray:
    """Exact reprojection of frame-t pixels into frame t+k.

    The oracle for chained-correspondence accuracy: back-project onto the
    corridor from camera t, project into camera t+k.
    """
    world = backproject(
        seq.geometry,
        pixels,
        seq.positions[t],
        float(seq.yaws[t]),
        seq.params.width,
        seq.params.height,
    )
    projected, _ = project_points(
        world,
        seq.positions[t + k],
        float(seq.yaws[t + k]),
        seq.params.width,
        seq.params.height,
    )
    return projected


# --- Ground-truth motion direction ---


def ground_truth_direction(
    positions: np.ndarray,
    yaws: np.ndarray,
    t: int,
    k: int,
    width: int,
    height: int,
) -> tuple[float, float]:
    """Projection of the camera-t-to-camera-(t+k) translation into camera
    t's image plane, centered coordinates.

    Raises ValueError for zero translation or a translation (near-)parallel
    to the image plane, whose projection lies at infinity.
    """
    if t + k >= len(positions):
        raise ValueError(f"span ({t}, {t + k}) outside pose sequence")
    delta = positions[t + k] - positions[t]
    norm = float(np.linalg.norm(delta))
    if norm == 0.0:
        raise ValueError("zero translation between poses")
    local = _rotation_y(float(yaws[t])).T @ delta
    if local[2] <= 1e-9 * norm:
        raise ValueError("translation direction out of the image bounds")
    focal = float(width)
    return (float(focal * local[0] / local[2]), float(focal * local[1] / local[2]))


def fundamental_from_poses(
    positions: np.ndarray,
    yaws: np.ndarray,
    t: int,
    k: int,
    width: int,
    height: int,
) -> np.ndarray:
    """Exact fundamental matrix between frames t and t+k.

    Satisfies x_b^T F x_a = 0 for projections x_a in frame t and x_b in
    frame t+k of any world point; its right null vector is the frame-t
    epipole.
    """
    focal = float(width)
    intrinsics = np.array(
        [[focal, 0.0, width / 2.0], [0.0, focal, height / 2.0], [0.0, 0.0, 1.0]]
    )
    rot_a = _rotation_y(float(yaws[t]))
    rot_b = _rotation_y(float(yaws[t + k]))
    relative_rotation = rot_b.T @ rot_a
    translation = rot_b.T @ (positions[t] - positions[t + k])
    cross = np.array(
        [
            [0.0, -translation[2], translation[1]],
            [translation[2], 0.0, -translation[0]],
            [-translation[1], translation[0], 0.0],
        ]
    )
    essential = cross @ relative_rotation
    k_inv = np.linalg.inv(intrinsics)
    f = k_inv.T @ essential @ k_inv
    return f / np.linalg.norm(f)


# --- Scene generation ---


def _sample_point_cloud(
    params: WalkSceneParams, geometry: CorridorGeometry, rng: np.random.Generator
) -> np.ndarray:
    count = params.point_count
    surface = rng.integers(0, 5, size=count)
    z = rng.uniform(-params.depth_range[0], geometry.end_z, size=count)
    u = rng.uniform(-1.0, 1.0, size=count)
    points = np.zeros((count, 3))
    points[:, 2] = z
    wx, hy = geometry.half_width, geometry.half_height
    points[surface == 0, 0] = -wx
    points[surface == 0, 1] = u[surface == 0] * hy
    points[surface == 1, 0] = wx
    points[surface == 1, 1] = u[surface == 1] * hy
    points[surface == 2, 1] = -hy
    points[surface == 2, 0] = u[surface == 2] * wx
    points[surface == 3, 1] = hy
    points[surface == 3, 0] = u[surface == 3] * wx
    end = surface == 4
    points[end, 0] = u[end] * wx
    points[end, 1] = rng.uniform(-1.0, 1.0, size=int(end.sum())) * hy
    points[end, 2] = geometry.end_z
    return points


def generate_walk_scene(
    params: WalkSceneParams, grid: GridSpec | None = None
) -> SyntheticSequence:
    """Deterministic scene: camera path, exact per-pair flow grids at the
    anchor grid, sway curve, and a surface point cloud for rendering."""
    grid = grid or GridSpec()
    positions, yaws = _camera_path(params)
    geometry = _corridor(params)
    rng = np.random.default_rng(params.seed)
    cloud = _sample_point_cloud(params, geometry, rng)
    colors = rng.integers(100, 256, size=(params.point_count, 3)).astype(np.uint8)

    width, height = params.width, params.height
    anchors = grid.anchor_positions(width, height)
    flow_grids: list[FlowGrid] = []
    for t in range(params.frame_count - 1):
        world = backproject(geometry, anchors, positions[t], float(yaws[t]), width, height)
        projected, depth = project_points(
            world, positions[t + 1], float(yaws[t + 1]), width, height
        )
        vectors = projected - anchors
        valid = (
            (depth > 1e-6)
            & (projected[:, 0] >= 0)
            & (projected[:, 0] <= width - 1)
            & (projected[:, 1] >= 0)
            & (projected[:, 1] <= height - 1)
        )
        if params.noise_sigma > 0:
            vectors = vectors + rng.normal(0.0, params.noise_sigma, size=vectors.shape)
        flow_grids.append(
            FlowGrid(
                t=t,
                width=width,
                height=height,
                points=anchors.copy(),
                vectors=np.where(valid[:, None], vectors, 0.0),
                valid=valid,
            )
        )

    sway = flow_mod.cumulative_x_shift(flow_grids)
    return SyntheticSequence(
        params=params,
        grid=grid,
        geometry=geometry,
        positions=positions,
        yaws=yaws,
        flow_grids=flow_grids,
        sway_curve=sway,
        point_cloud=cloud,
        point_colors=colors,
    )


def two_view_correspondences(
    seq: SyntheticSequence, t: int, k: int
) -> tuple[np.ndarray, np.ndarray]:
    """Exact projections of the point cloud visible in both frames."""
    width, height = seq.params.width, seq.params.height
    pa, da = project_points(seq.point_cloud, seq.positions[t], float(seq.yaws[t]), width, height)
    pb, db = project_points(
        seq.point_cloud, seq.positions[t + k], float(seq.yaws[t + k]), width, height
    )
    inside_a = (da > 1e-6) & (pa[:, 0] >= 0) & (pa[:, 0] <= width - 1)
    inside_a &= (pa[:, 1] >= 0) & (pa[:, 1] <= height - 1)
    inside_b = (db > 1e-6) & (pb[:, 0] >= 0) & (pb[:, 0] <= width - 1)
    inside_b &= (pb[:, 1] >= 0) & (pb[:, 1] <= height - 1)
    keep = inside_a & inside_b
    return pa[keep], pb[keep]


# --- Rendering ---


def _render_frame(seq: SyntheticSequence, t: int) -> Frame:
    width, height = seq.params.width, seq.params.height
    ramp_x = np.linspace(60, 120, width)[None, :]
    ramp_y = np.linspace(40, 100, height)[:, None]
    base = np.clip(ramp_x + ramp_y, 0, 255)
    data = np.stack([base * 0.9, base, base * 1.1], axis=-1)
    data = np.clip(data, 0, 255).astype(np.uint8)

    projected, depth = project_points(
        seq.point_cloud, seq.positions[t], float(seq.yaws[t]), width, height
    )
    visible = (depth > 0.3) & np.isfinite(projected).all(axis=1)
    visible &= (projected[:, 0] >= 1) & (projected[:, 0] <= width - 2)
    visible &= (projected[:, 1] >= 1) & (projected[:, 1] <= height - 2)
    order = np.argsort(-depth[visible])  # far points first, near overwrite
    idx = np.flatnonzero(visible)[order]
    for point in idx:
        cx = int(round(projected[point, 0]))
        cy = int(round(projected[point, 1]))
        data[cy - 1 : cy + 2, cx - 1 : cx + 2] = seq.point_colors[point]
    return Frame(index=t, data=data)
