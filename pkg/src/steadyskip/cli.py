"""Command-line interface.

Commands: ``fastforward`` (solve a sampling plan), ``stereo`` (sway-based
stereo pairs and anaglyphs), ``metrics`` (evaluate an existing plan),
``synth`` (generate a synthetic walking scene), ``render`` (copy a plan's
selected frames).  Flags override config-file values, which override the
built-in defaults.

Exit codes: 0 success, 2 input or configuration error, 3 infeasible
sampling graph, 4 internal error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from dataclasses import fields
from pathlib import Path

from steadyskip.costgraph import InfeasibleGraphError
from steadyskip.ingest import FrameSourceError
from steadyskip.pipeline import (
    PipelineInputError,
    RunConfig,
    run_fastforward,
    run_metrics,
    run_render,
    run_stereo,
    run_synth,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_INTERNAL = 4

_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}
_PATH_FIELDS = {"input", "out", "flow_cache", "direction_cache", "importance", "plan"}
_BOOL_FIELDS = {"swap_eyes", "side_by_side", "render", "figures", "costs_csv"}
_INT_FIELDS = {
    "tau", "d_start", "d_end", "grid_rows", "grid_cols", "flow_max_side",
    "flow_window", "flow_levels", "ransac_iterations", "seed", "frames",
    "width", "height", "saccade_every", "saccade_duration", "points",
    "smooth_window", "max_skip_truth",
}
_FLOAT_FIELDS = {
    "alpha", "beta", "gamma", "c_foe", "eta", "speedup", "k_flow",
    "grid_margin", "inlier_threshold", "prominence", "speed", "sway_amp",
    "sway_period", "yaw_amp", "yaw_period", "saccade_angle", "depth_min",
    "depth_max", "noise",
}


def _parse_range(text: str) -> tuple[int, int]:
    try:
        first, last = text.split(":")
        return (int(first), int(last))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"range must look like A:B, got {text!r}"
        ) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steadyskip",
        description="Stable fast-forward frame sampling and sway-based stereo.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser, *, with_sampling: bool) -> None:
        p.add_argument("--config", type=Path, help="flat key=value settings file")
        p.add_argument("--input", type=Path, help="PPM/PGM frame directory or .y4m file")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--range", dest="frame_range", type=_parse_range, metavar="A:B",
                       help="restrict to inclusive input frame range")
        p.add_argument("--flow-cache", dest="flow_cache", type=Path,
                       help="line-delimited JSON flow cache (read if present, else written)")
        p.add_argument("--seed", type=int, help="scene seed (synth)")
        p.add_argument("--sequence-id", dest="sequence_id", help="label used in CSV output")
        p.add_argument("--no-figures", dest="figures", action="store_false", default=None,
                       help="skip writing diagnostic figures")
        p.add_argument("--grid-rows", dest="grid_rows", type=int)
        p.add_argument("--grid-cols", dest="grid_cols", type=int)
        p.add_argument("--grid-margin", dest="grid_margin", type=float)
        if with_sampling:
            p.add_argument("--mode", choices=["epipolar", "foe-only"])
            p.add_argument("--order", choices=["first", "second"])
            p.add_argument("--speedup", type=float, help="target speedup multiplier")
            p.add_argument("--kflow", dest="k_flow", type=float,
                           help="explicit flow-magnitude target (overrides --speedup)")
            p.add_argument("--tau", type=int, help="maximum allowed frame skip")
            p.add_argument("--dstart", dest="d_start", type=int)
            p.add_argument("--dend", dest="d_end", type=int)
            p.add_argument("--alpha", type=float)
            p.add_argument("--beta", type=float)
            p.add_argument("--gamma", type=float)
            p.add_argument("--cfoe", dest="c_foe", type=float)
            p.add_argument("--eta", type=float)
            p.add_argument("--direction-cache", dest="direction_cache", type=Path)
            p.add_argument("--ransac-iters", dest="ransac_iterations", type=int)

    ff = sub.add_parser("fastforward", help="solve a stable fast-forward plan")
    add_common(ff, with_sampling=True)
    ff.add_argument("--importance", type=Path,
                    help="per-frame penalty file, one value per line")
    ff.add_argument("--render", action="store_true", default=None,
                    help="copy selected frames as out_%%06d.ppm")
    ff.add_argument("--costs-csv", dest="costs_csv", action="store_true", default=None,
                    help="dump the full transition cost table")

    st = sub.add_parser("stereo", help="extract sway-based stereo pairs")
    add_common(st, with_sampling=False)
    st.add_argument("--smooth-window", dest="smooth_window", type=int)
    st.add_argument("--prominence", type=float)
    st.add_argument("--swap-eyes", dest="swap_eyes", action="store_true", default=None)
    st.add_argument("--side-by-side", dest="side_by_side", action="store_true", default=None)

    me = sub.add_parser("metrics", help="evaluate a plan against the uniform baseline")
    add_common(me, with_sampling=True)
    me.add_argument("--plan", type=Path, help="plan JSON produced by fastforward")

    sy = sub.add_parser("synth", help="generate a synthetic walking scene")
    add_common(sy, with_sampling=False)
    sy.add_argument("--frames", type=int)
    sy.add_argument("--width", type=int)
    sy.add_argument("--height", type=int)
    sy.add_argument("--speed", type=float, help="forward speed, world units/frame")
    sy.add_argument("--sway-amp", dest="sway_amp", type=float)
    sy.add_argument("--sway-period", dest="sway_period", type=float)
    sy.add_argument("--yaw-amp", dest="yaw_amp", type=float)
    sy.add_argument("--yaw-period", dest="yaw_period", type=float)
    sy.add_argument("--saccade-every", dest="saccade_every", type=int,
                    help="insert alternating gaze saccades every N frames")
    sy.add_argument("--saccade-angle", dest="saccade_angle", type=float)
    sy.add_argument("--saccade-duration", dest="saccade_duration", type=int)
    sy.add_argument("--points", type=int)
    sy.add_argument("--depth-min", dest="depth_min", type=float)
    sy.add_argument("--depth-max", dest="depth_max", type=float)
    sy.add_argument("--noise", type=float, help="flow noise sigma in pixels")
    sy.add_argument("--render", action="store_true", default=None,
                    help="also rasterize textured PPM frames")
    sy.add_argument("--max-skip-truth", dest="max_skip_truth", type=int,
                    help="largest skip exported in the ground-truth direction table")
    sy.add_argument("--smooth-window", dest="smooth_window", type=int)
    sy.add_argument("--prominence", type=float)

    re = sub.add_parser("render", help="copy a plan's selected frames")
    add_common(re, with_sampling=False)
    re.add_argument("--plan", type=Path, help="plan JSON produced by fastforward")

    return parser


def _coerce(key: str, raw: str):
    if key in _PATH_FIELDS:
        return Path(raw)
    if key in _BOOL_FIELDS:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise PipelineInputError(f"config key {key}: expected a boolean, got {raw!r}")
    if key == "frame_range":
        first, last = raw.split(":")
        return (int(first), int(last))
    try:
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
    except ValueError as exc:
        raise PipelineInputError(f"config key {key}: bad value {raw!r}") from exc
    return raw


def _read_config_file(path: Path) -> dict:
    if not path.exists():
        raise PipelineInputError(f"config file does not exist: {path}")
    values: dict = {}
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise PipelineInputError(f"{path}:{line_no}: expected key=value")
        key, raw = stripped.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _CONFIG_FIELDS:
            raise PipelineInputError(f"{path}:{line_no}: unknown key {key!r}")
        values[key] = _coerce(key, raw.strip())
    return values


def parse_config(argv: list[str] | None = None) -> tuple[str, RunConfig]:
    """CLI flags override config-file values override defaults."""
    args = build_parser().parse_args(argv)
    settings: dict = {}
    if getattr(args, "config", None) is not None:
        settings.update(_read_config_file(args.config))
    for key in _CONFIG_FIELDS:
        if hasattr(args, key) and getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    try:
        cfg = RunConfig(**settings)
    except TypeError as exc:
        raise PipelineInputError(f"bad configuration: {exc}") from exc
    _validate(cfg)
    return args.command, cfg


def _validate(cfg: RunConfig) -> None:
    checks = [
        (cfg.tau >= 1, "tau must be >= 1"),
        (cfg.d_start >= 0, "dstart must be >= 0"),
        (cfg.d_end >= 0, "dend must be >= 0"),
        (cfg.speedup >= 1, "speedup must be >= 1"),
        (cfg.k_flow is None or cfg.k_flow > 0, "kflow must be > 0"),
        (cfg.smooth_window >= 1 and cfg.smooth_window % 2 == 1,
         "smooth-window must be odd and >= 1"),
        (cfg.ransac_iterations >= 1, "ransac-iters must be >= 1"),
        (cfg.mode in ("epipolar", "foe-only"), "mode must be epipolar or foe-only"),
        (cfg.order in ("first", "second"), "order must be first or second"),
    ]
    for name in ("alpha", "beta", "gamma", "c_foe", "eta"):
        value = getattr(cfg, name)
        checks.append((value is None or value >= 0, f"{name} must be >= 0"))
    for ok, message in checks:
        if not ok:
            raise PipelineInputError(message)


def main(argv: list[str] | None = None) -> int:
    try:
        command, cfg = parse_config(argv)
    except PipelineInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    try:
        if command == "fastforward":
            result = run_fastforward(cfg)
            print(f"plan: {result.plan_path} ({len(result.plan.frames)} frames)")
            if result.metrics is not None:
                print(
                    "metrics: median skip "
                    f"{result.metrics.median_skip:g}, jitter {result.metrics.jitter:.3f} "
                    f"(uniform {result.metrics.baseline_jitter:.3f})"
                )
        elif command == "stereo":
            result = run_stereo(cfg)
            if result.warning:
                print(f"warning: {result.warning}", file=sys.stderr)
            print(f"pairs: {result.pairs_path} ({len(result.pairs.pairs)} pairs)")
        elif command == "metrics":
            metrics, path = run_metrics(cfg)
            print(f"metrics: {path} (jitter {metrics.jitter:.3f})")
        elif command == "synth":
            seq = run_synth(cfg)
            print(f"scene: {cfg.out} ({seq.frame_count} frames)")
        elif command == "render":
            out = run_render(cfg)
            print(f"frames: {out}")
        else:  # unreachable behind argparse
            raise PipelineInputError(f"unknown command {command!r}")
    except (PipelineInputError, FrameSourceError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except InfeasibleGraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except Exception:
        traceback.print_exc()
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
