from __future__ import annotations

import numpy as np
import pytest

from steadyskip.flow import (
    FlowGrid,
    FlowUnavailableError,
    GridSpec,
    IntegratedFlow,
    cumulative_x_shift,
    integrate_flow,
    mean_flow_magnitude,
    read_flow_cache,
    sequence_flow_statistics,
    sparse_lk_flow,
    write_flow_cache,
)
from steadyskip.ingest import GrayFrame, build_pyramid

from conftest import textured_gray

WIDTH, HEIGHT = 200, 120


def _grid_flow(t, vectors, valid=None, width=WIDTH, height=HEIGHT, grid=None):
    grid = grid or GridSpec()
    points = grid.anchor_positions(width, height)
    vectors = np.broadcast_to(np.asarray(vectors, dtype=np.float64), points.shape).copy()
    if valid is None:
        valid = np.ones(len(points), dtype=bool)
    return FlowGrid(t=t, width=width, height=height, points=points,
                    vectors=vectors, valid=np.asarray(valid, dtype=bool))


class TestGridSpec:
    def test_default_layout_has_fifty_anchors(self):
        grid = GridSpec()
        assert grid.count == 50
        points = grid.anchor_positions(WIDTH, HEIGHT)
        assert points.shape == (50, 2)
        assert points[:, 0].min() >= 0.05 * WIDTH
        assert points[:, 0].max() <= 0.95 * WIDTH
        assert points[:, 1].min() >= 0.05 * HEIGHT
        assert points[:, 1].max() <= 0.95 * HEIGHT

    def test_margin_bounds(self):
        with pytest.raises(ValueError):
            GridSpec(margin=0.3)
        with pytest.raises(ValueError):
            GridSpec(rows=0)


class TestSparseLk:
    def test_identical_frames_yield_zero_flow(self):
        pyr = build_pyramid(textured_gray(WIDTH, HEIGHT), 3)
        result = sparse_lk_flow(pyr, pyr, GridSpec())
        assert result.valid.all()
        assert np.all(np.hypot(result.vectors[:, 0], result.vectors[:, 1]) < 1e-6)

    def test_three_pixel_translation(self):
        prev = build_pyramid(textured_gray(WIDTH, HEIGHT), 3)
        nxt = build_pyramid(textured_gray(WIDTH, HEIGHT, shift_x=3.0), 3)
        result = sparse_lk_flow(prev, nxt, GridSpec())
        assert result.valid.all()
        errors = np.hypot(result.vectors[:, 0] - 3.0, result.vectors[:, 1])
        assert errors.max() < 0.25

    def test_constant_image_is_all_invalid(self):
        flat = build_pyramid(GrayFrame(data=np.full((HEIGHT, WIDTH), 0.5)), 3)
        result = sparse_lk_flow(flat, flat, GridSpec())
        assert not result.valid.any()

    def test_size_mismatch_rejected(self):
        a = build_pyramid(textured_gray(WIDTH, HEIGHT), 2)
        b = build_pyramid(textured_gray(WIDTH + 8, HEIGHT), 2)
        with pytest.raises(ValueError, match="equally sized"):
            sparse_lk_flow(a, b, GridSpec())


class TestIntegration:
    def test_single_grid_mean_equals_input(self):
        g = _grid_flow(0, (1.5, -0.5))
        out = integrate_flow([g], "mean")
        assert out.span == (0, 1)
        assert np.array_equal(out.vectors, g.vectors)
        assert np.array_equal(out.points, g.points)

    def test_mean_and_sum_arithmetic(self):
        flows = [_grid_flow(0, (1.0, 0.0)), _grid_flow(1, (3.0, 0.0))]
        mean = integrate_flow(flows, "mean")
        total = integrate_flow(flows, "sum")
        assert np.allclose(mean.vectors, [2.0, 0.0])
        assert np.allclose(total.vectors, [4.0, 0.0])

    def test_mean_is_sum_divided_by_k_exactly(self, rng):
        flows = [
            _grid_flow(t, rng.normal(size=2)) for t in range(4)
        ]
        mean = integrate_flow(flows, "mean")
        total = integrate_flow(flows, "sum")
        assert np.array_equal(mean.vectors, total.vectors / 4)

    def test_anchor_invalid_in_one_grid_is_dropped(self):
        valid = np.ones(50, dtype=bool)
        valid[7] = False
        flows = [_grid_flow(0, (1.0, 0.0)), _grid_flow(1, (1.0, 0.0), valid=valid)]
        out = integrate_flow(flows, "mean")
        assert len(out.vectors) == 49
        kept = GridSpec().anchor_positions(WIDTH, HEIGHT)[valid]
        assert np.array_equal(out.points, kept)

    def test_gap_in_indices_rejected(self):
        flows = [_grid_flow(0, (1, 0)), _grid_flow(2, (1, 0))]
        with pytest.raises(ValueError, match="gap"):
            integrate_flow(flows, "mean")

    def test_empty_list_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            integrate_flow([], "sum")


class TestMagnitude:
    def test_three_four_five(self):
        out = integrate_flow([_grid_flow(0, (3.0, 4.0))], "mean")
        assert mean_flow_magnitude(out) == pytest.approx(5.0)

    def test_mixed_unit_vectors(self):
        grid = GridSpec(rows=1, cols=2, margin=0.0)
        points = grid.anchor_positions(WIDTH, HEIGHT)
        g = FlowGrid(t=0, width=WIDTH, height=HEIGHT, points=points,
                     vectors=np.array([[1.0, 0.0], [0.0, 1.0]]),
                     valid=np.ones(2, dtype=bool))
        assert mean_flow_magnitude(integrate_flow([g], "mean")) == pytest.approx(1.0)

    def test_matches_scalar_loop(self, rng):
        vectors = rng.normal(size=(50, 2))
        g = _grid_flow(0, (0, 0))
        g.vectors[:] = vectors
        expected = sum(float(np.hypot(vx, vy)) for vx, vy in vectors) / 50
        assert mean_flow_magnitude(integrate_flow([g], "mean")) == pytest.approx(
            expected, abs=1e-12
        )

    def test_rotation_invariance(self, rng):
        vectors = rng.normal(size=(50, 2))
        theta = 1.1
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        g1 = _grid_flow(0, (0, 0))
        g1.vectors[:] = vectors
        g2 = _grid_flow(0, (0, 0))
        g2.vectors[:] = vectors @ rot.T
        a = mean_flow_magnitude(integrate_flow([g1], "mean"))
        b = mean_flow_magnitude(integrate_flow([g2], "mean"))
        assert a == pytest.approx(b, rel=1e-12)

    def test_no_anchors_signals_unavailable(self):
        g = _grid_flow(0, (1.0, 0.0), valid=np.zeros(50, dtype=bool))
        out = integrate_flow([g], "mean")
        with pytest.raises(FlowUnavailableError):
            mean_flow_magnitude(out)


class TestSequenceStatistics:
    def test_uniform_flow(self):
        flows = [_grid_flow(t, (2.0, 0.0)) for t in range(6)]
        stats = sequence_flow_statistics(flows)
        assert stats.mean_magnitude == pytest.approx(2.0)
        assert all(v == pytest.approx(2.0) for v in stats.per_frame)

    def test_half_one_half_three(self):
        flows = [_grid_flow(t, (1.0, 0.0)) for t in range(3)]
        flows += [_grid_flow(t + 3, (3.0, 0.0)) for t in range(3)]
        assert sequence_flow_statistics(flows).mean_magnitude == pytest.approx(2.0)

    def test_invalid_frames_excluded(self):
        flows = [
            _grid_flow(0, (1.0, 0.0)),
            _grid_flow(1, (9.0, 0.0), valid=np.zeros(50, dtype=bool)),
            _grid_flow(2, (3.0, 0.0)),
        ]
        stats = sequence_flow_statistics(flows)
        assert stats.per_frame[1] is None
        assert stats.mean_magnitude == pytest.approx(2.0)

    def test_all_invalid_gives_none(self):
        flows = [_grid_flow(0, (1.0, 0.0), valid=np.zeros(50, dtype=bool))]
        assert sequence_flow_statistics(flows).mean_magnitude is None


class TestSwayCurve:
    def test_constant_positive_shift(self):
        flows = [_grid_flow(t, (1.0, 0.0)) for t in range(5)]
        curve = cumulative_x_shift(flows)
        assert np.allclose(curve.values, [0, 1, 2, 3, 4, 5])

    def test_alternating_shift(self):
        flows = [_grid_flow(t, (1.0 if t % 2 == 0 else -1.0, 0.0)) for t in range(4)]
        curve = cumulative_x_shift(flows)
        assert np.allclose(curve.values, [0, 1, 0, 1, 0])

    def test_differences_telescope(self, rng):
        flows = []
        for t in range(10):
            g = _grid_flow(t, (0.0, 0.0))
            g.vectors[:] = rng.normal(size=(50, 2))
            flows.append(g)
        curve = cumulative_x_shift(flows)
        for t, g in enumerate(flows):
            step = float(np.mean(g.vectors[:, 0]))
            assert curve.values[t + 1] - curve.values[t] == pytest.approx(step, abs=1e-12)

    def test_invalid_frame_contributes_zero(self):
        flows = [
            _grid_flow(0, (2.0, 0.0)),
            _grid_flow(1, (5.0, 0.0), valid=np.zeros(50, dtype=bool)),
            _grid_flow(2, (1.0, 0.0)),
        ]
        assert np.allclose(cumulative_x_shift(flows).values, [0, 2, 2, 3])


class TestCache:
    def test_round_trip(self, tmp_path, rng):
        flows = []
        for t in range(3):
            g = _grid_flow(t, (0.0, 0.0))
            g.vectors[:] = rng.normal(size=(50, 2))
            g.valid[rng.integers(0, 50, 5)] = False
            flows.append(g)
        path = tmp_path / "flows.jsonl"
        write_flow_cache(path, flows)
        loaded = read_flow_cache(path)
        assert len(loaded) == 3
        for original, restored in zip(flows, loaded):
            assert restored.t == original.t
            assert restored.width == original.width
            assert np.array_equal(restored.points, original.points)
            assert np.array_equal(restored.vectors, original.vectors)
            assert np.array_equal(restored.valid, original.valid)
