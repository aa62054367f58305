from __future__ import annotations

import json

import numpy as np
import pytest

from steadyskip import cli
from steadyskip.cli import parse_config
from steadyskip.flow import read_flow_cache, write_flow_cache
from steadyskip.ingest import read_image
from steadyskip.pipeline import (
    PipelineInputError,
    RunConfig,
    run_fastforward,
    run_stereo,
)
from steadyskip.synth import WalkSceneParams, generate_walk_scene

from test_flow import _grid_flow


def _scene_cache(tmp_path, **params):
    defaults = dict(frame_count=150, sway_amplitude=0.0, yaw_amplitude=0.0, seed=3)
    defaults.update(params)
    seq = generate_walk_scene(WalkSceneParams(**defaults))
    cache = tmp_path / "flows.jsonl"
    seq.write_flow_cache(cache)
    return seq, cache


class TestParseConfig:
    def test_epipolar_defaults_match_published_working_point(self):
        command, cfg = parse_config(["fastforward", "--input", "x"])
        assert command == "fastforward"
        sampling = cfg.sampling_config(k_flow=5.0)
        assert sampling.alpha == 1000.0
        assert sampling.beta == 200.0
        assert sampling.gamma == 3.0
        assert sampling.c_foe == 4.0
        assert sampling.tau == 100
        assert sampling.d_start == 120 and sampling.d_end == 120

    def test_foe_only_defaults(self):
        _, cfg = parse_config(["fastforward", "--input", "x", "--mode", "foe-only"])
        sampling = cfg.sampling_config(k_flow=5.0)
        assert sampling.alpha == 3.0
        assert sampling.beta == 10.0
        assert sampling.gamma == 3.0

    def test_explicit_weights_override_mode_defaults(self):
        _, cfg = parse_config(
            ["fastforward", "--input", "x", "--mode", "foe-only", "--alpha", "7"]
        )
        sampling = cfg.sampling_config(k_flow=5.0)
        assert sampling.alpha == 7.0
        assert sampling.beta == 10.0

    def test_zero_tau_rejected(self):
        with pytest.raises(PipelineInputError, match="tau must be >= 1"):
            parse_config(["fastforward", "--input", "x", "--tau", "0"])

    def test_config_file_and_flag_precedence(self, tmp_path):
        config = tmp_path / "run.conf"
        config.write_text("tau=40\nspeedup=6\nmode=foe-only\n", encoding="utf-8")
        _, cfg = parse_config(
            ["fastforward", "--input", "x", "--config", str(config), "--speedup", "8"]
        )
        assert cfg.tau == 40  # from file
        assert cfg.speedup == 8.0  # flag wins
        assert cfg.mode == "foe-only"

    def test_unknown_config_key_is_named(self, tmp_path):
        config = tmp_path / "run.conf"
        config.write_text("taus=40\n", encoding="utf-8")
        with pytest.raises(PipelineInputError, match="taus"):
            parse_config(["fastforward", "--input", "x", "--config", str(config)])

    def test_cli_exit_code_for_bad_config(self, capsys):
        assert cli.main(["fastforward", "--input", "x", "--tau", "0"]) == cli.EXIT_INPUT
        assert "tau" in capsys.readouterr().err


class TestFastForward:
    def test_flow_injection_run_produces_artifacts(self, tmp_path):
        _, cache = _scene_cache(tmp_path, sway_amplitude=0.04, yaw_amplitude=1.5)
        out = tmp_path / "out"
        cfg = RunConfig(flow_cache=cache, out=out, mode="foe-only", order="second",
                        tau=25, d_start=10, d_end=10, speedup=8.0)
        result = run_fastforward(cfg)
        assert result.plan_path.exists()
        assert (out / "plan.png").exists()
        payload = json.loads(result.plan_path.read_text())
        frames = payload["frames"]
        assert frames == sorted(frames)
        assert frames[0] <= 10
        assert frames[-1] >= 150 - 1 - 10
        gaps = np.diff(frames)
        assert gaps.min() >= 1 and gaps.max() <= 25
        assert payload["config"]["k_flow"] > 0
        # flow-injection runs have no frames, hence no appearance signal
        assert all(t["appearance"] == 0.0 for t in payload["transitions"])

    def test_rerun_is_byte_identical(self, tmp_path):
        _, cache = _scene_cache(tmp_path, sway_amplitude=0.03)
        args = dict(flow_cache=cache, mode="foe-only", order="first",
                    tau=20, d_start=5, d_end=5, speedup=6.0)
        a = run_fastforward(RunConfig(out=tmp_path / "a", figures=False, **args))
        b = run_fastforward(RunConfig(out=tmp_path / "b", figures=False, **args))
        assert a.plan_path.read_bytes() == b.plan_path.read_bytes()
        assert a.metrics_path.read_bytes() == b.metrics_path.read_bytes()

    def test_tau_one_keeps_every_frame(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=40)
        cfg = RunConfig(flow_cache=cache, out=tmp_path / "out", mode="foe-only",
                        order="first", tau=1, d_start=0, d_end=0, figures=False)
        result = run_fastforward(cfg)
        assert result.plan.frames == list(range(40))

    def test_constant_velocity_median_skip_near_target(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=250)
        cfg = RunConfig(flow_cache=cache, out=tmp_path / "out", mode="foe-only",
                        order="first", tau=30, d_start=20, d_end=20,
                        speedup=10.0, figures=False)
        result = run_fastforward(cfg)
        assert 7 <= result.metrics.median_skip <= 13

    def test_importance_bias_excludes_frame(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=60)
        base = RunConfig(flow_cache=cache, out=tmp_path / "base", mode="foe-only",
                         order="first", tau=6, d_start=0, d_end=0, figures=False)
        plan = run_fastforward(base).plan
        victim = plan.frames[len(plan.frames) // 2]
        deltas = np.zeros(60)
        deltas[victim] = 1e9
        importance = tmp_path / "importance.txt"
        importance.write_text("\n".join(str(v) for v in deltas), encoding="utf-8")
        biased = RunConfig(flow_cache=cache, out=tmp_path / "biased", mode="foe-only",
                           order="first", tau=6, d_start=0, d_end=0, figures=False,
                           importance=importance)
        assert victim not in run_fastforward(biased).plan.frames

    def test_costs_csv_dump(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=30)
        cfg = RunConfig(flow_cache=cache, out=tmp_path / "out", mode="foe-only",
                        order="first", tau=5, d_start=0, d_end=0,
                        costs_csv=True, figures=False)
        run_fastforward(cfg)
        lines = (tmp_path / "out" / "costs.csv").read_text().splitlines()
        assert lines[0].startswith("i,j,shakiness")
        expected_rows = sum(min(5, 30 - 1 - i) for i in range(30))
        assert len(lines) == 1 + expected_rows

    def test_direction_cache_reuse_is_identical(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=50, sway_amplitude=0.03)
        dcache = tmp_path / "directions.jsonl"
        args = dict(flow_cache=cache, mode="foe-only", order="second", tau=10,
                    d_start=5, d_end=5, direction_cache=dcache, figures=False)
        first = run_fastforward(RunConfig(out=tmp_path / "a", **args))
        assert dcache.exists()
        second = run_fastforward(RunConfig(out=tmp_path / "b", **args))
        assert first.plan_path.read_bytes() == second.plan_path.read_bytes()

    def test_missing_input_is_input_error(self, tmp_path):
        code = cli.main(["fastforward", "--input", str(tmp_path / "missing"),
                         "--out", str(tmp_path / "out")])
        assert code == cli.EXIT_INPUT

    def test_infeasible_graph_exit_code(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=30)
        code = cli.main(["fastforward", "--flow-cache", str(cache),
                         "--out", str(tmp_path / "out"), "--mode", "foe-only",
                         "--dstart", "20", "--dend", "20"])
        assert code == cli.EXIT_INFEASIBLE

    def test_flow_cache_frame_mismatch_rejected(self, tmp_path):
        seq, cache = _scene_cache(tmp_path, frame_count=30)
        frames_dir = tmp_path / "frames"
        seq.write_frames(frames_dir)
        extra = generate_walk_scene(WalkSceneParams(frame_count=10, seed=1))
        write_flow_cache(cache, extra.flow_grids)
        cfg = RunConfig(input=frames_dir, flow_cache=cache, out=tmp_path / "out",
                        mode="foe-only", figures=False)
        with pytest.raises(PipelineInputError, match="transitions"):
            run_fastforward(cfg)


class TestEndToEndFrames:
    def test_rendered_frames_epipolar_smoke(self, tmp_path):
        seq = generate_walk_scene(
            WalkSceneParams(frame_count=36, width=320, height=240,
                            sway_amplitude=0.02, yaw_amplitude=1.0,
                            point_count=2200, seed=6)
        )
        frames_dir = tmp_path / "frames"
        seq.write_frames(frames_dir)
        out = tmp_path / "out"
        code = cli.main([
            "fastforward", "--input", str(frames_dir), "--out", str(out),
            "--mode", "epipolar", "--order", "first", "--tau", "8",
            "--dstart", "4", "--dend", "4", "--speedup", "4",
            "--ransac-iters", "100", "--render",
        ])
        assert code == cli.EXIT_OK
        payload = json.loads((out / "plan.json").read_text())
        assert len(payload["frames"]) >= 5
        assert any(t["appearance"] > 0 for t in payload["transitions"])
        rendered = sorted((out / "frames").glob("out_*.ppm"))
        assert len(rendered) == len(payload["frames"])
        assert read_image(rendered[0]).shape == (240, 320, 3)

    def test_render_command_copies_selected(self, tmp_path):
        seq, cache = _scene_cache(tmp_path, frame_count=30)
        frames_dir = tmp_path / "frames"
        seq.write_frames(frames_dir)
        out = tmp_path / "out"
        assert cli.main(["fastforward", "--flow-cache", str(cache), "--out", str(out),
                         "--mode", "foe-only", "--tau", "5", "--dstart", "2",
                         "--dend", "2", "--no-figures"]) == cli.EXIT_OK
        render_dir = tmp_path / "rendered"
        assert cli.main(["render", "--plan", str(out / "plan.json"),
                         "--input", str(frames_dir), "--out", str(render_dir)]) == cli.EXIT_OK
        payload = json.loads((out / "plan.json").read_text())
        assert len(list(render_dir.glob("out_*.ppm"))) == len(payload["frames"])

    def test_metrics_command(self, tmp_path):
        _, cache = _scene_cache(tmp_path, frame_count=80, sway_amplitude=0.04)
        out = tmp_path / "out"
        assert cli.main(["fastforward", "--flow-cache", str(cache), "--out", str(out),
                         "--mode", "foe-only", "--tau", "12", "--dstart", "5",
                         "--dend", "5", "--speedup", "6", "--no-figures"]) == cli.EXIT_OK
        metrics_out = tmp_path / "m"
        code = cli.main(["metrics", "--plan", str(out / "plan.json"),
                         "--flow-cache", str(cache), "--out", str(metrics_out),
                         "--speedup", "6", "--no-figures"])
        assert code == cli.EXIT_OK
        lines = (metrics_out / "metrics.csv").read_text().splitlines()
        assert lines[0].startswith("sequence_id,mode,order")
        assert len(lines) == 2


class TestFlowDownscaling:
    def test_large_frames_report_original_pixel_units(self, tmp_path):
        from steadyskip.flow import GridSpec
        from steadyskip.pipeline import compute_flows

        seq = generate_walk_scene(
            WalkSceneParams(frame_count=3, width=1280, height=960,
                            forward_speed=0.08, point_count=9000, seed=5)
        )
        frames = (seq.render_frame(t) for t in range(3))
        flows, _, count = compute_flows(frames, GridSpec(), max_side=640)
        assert count == 3 and len(flows) == 2
        assert flows[0].width == 1280 and flows[0].height == 960
        expected_anchors = GridSpec().anchor_positions(1280, 960)
        assert np.allclose(flows[0].points, expected_anchors)
        exact = seq.flow_grids[0]
        both = flows[0].valid & exact.valid
        assert both.sum() >= 25
        # displacements are rescaled to original pixel units (downscale is 2x)
        errors = np.hypot(*(flows[0].vectors[both] - exact.vectors[both]).T)
        assert np.median(errors) < 1.5


class TestCliEdges:
    def test_range_flag_restricts_input(self, tmp_path):
        seq = generate_walk_scene(
            WalkSceneParams(frame_count=40, width=320, height=240,
                            sway_amplitude=0.0, point_count=2000, seed=6)
        )
        frames_dir = tmp_path / "frames"
        seq.write_frames(frames_dir)
        out = tmp_path / "out"
        code = cli.main([
            "fastforward", "--input", str(frames_dir), "--range", "5:24",
            "--out", str(out), "--mode", "foe-only", "--tau", "4",
            "--dstart", "2", "--dend", "2", "--no-figures",
        ])
        assert code == cli.EXIT_OK
        payload = json.loads((out / "plan.json").read_text())
        assert payload["input_frames"] == 20

    def test_internal_error_exit_code(self, monkeypatch, tmp_path):
        def boom(cfg):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(cli, "run_synth", boom)
        assert cli.main(["synth", "--out", str(tmp_path)]) == cli.EXIT_INTERNAL


class TestStereoPipeline:
    def test_stereo_with_cache_and_frames(self, tmp_path):
        seq = generate_walk_scene(
            WalkSceneParams(frame_count=120, width=320, height=240,
                            sway_amplitude=0.08, sway_period=24.0,
                            point_count=1500, seed=4)
        )
        cache = tmp_path / "flows.jsonl"
        seq.write_flow_cache(cache)
        frames_dir = tmp_path / "frames"
        seq.write_frames(frames_dir)
        out = tmp_path / "stereo"
        code = cli.main(["stereo", "--input", str(frames_dir),
                         "--flow-cache", str(cache), "--out", str(out),
                         "--prominence", "1.0", "--side-by-side"])
        assert code == cli.EXIT_OK
        payload = json.loads((out / "stereo_pairs.json").read_text())
        assert len(payload["pairs"]) >= 3
        assert (out / "sway.png").exists()
        anaglyphs = sorted(out.glob("anaglyph_*.ppm"))
        assert len(anaglyphs) == len(payload["pairs"])
        sbs = sorted(out.glob("sidebyside_*.ppm"))
        assert len(sbs) == len(payload["pairs"])
        assert read_image(sbs[0]).shape == (240, 640, 3)
        # anaglyph red channel comes from the pair's first frame
        first_pair = payload["pairs"][0]
        left = read_image(frames_dir / f"frame_{first_pair[0]:06d}.ppm")
        composite = read_image(anaglyphs[0])
        assert np.array_equal(composite[:, :, 0], left[:, :, 0])

    def test_swap_eyes_exchanges_members(self, tmp_path):
        seq = generate_walk_scene(
            WalkSceneParams(frame_count=120, sway_amplitude=0.08,
                            sway_period=24.0, seed=4)
        )
        cache = tmp_path / "flows.jsonl"
        seq.write_flow_cache(cache)
        plain = run_stereo(RunConfig(flow_cache=cache, out=tmp_path / "a", figures=False))
        swapped = run_stereo(RunConfig(flow_cache=cache, out=tmp_path / "b",
                                       figures=False, swap_eyes=True))
        assert swapped.pairs.pairs == [(b, a) for a, b in plain.pairs.pairs]

    def test_monotone_pan_warns_and_writes_empty(self, tmp_path, capsys):
        flows = [_grid_flow(t, (1.0, 0.0)) for t in range(40)]
        cache = tmp_path / "flows.jsonl"
        write_flow_cache(cache, flows)
        out = tmp_path / "out"
        code = cli.main(["stereo", "--flow-cache", str(cache), "--out", str(out)])
        assert code == cli.EXIT_OK
        assert "no sway extrema" in capsys.readouterr().err
        payload = json.loads((out / "stereo_pairs.json").read_text())
        assert payload["pairs"] == []
