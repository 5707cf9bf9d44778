"""Command-line entry point: ``padaction <command> [flags]``.

Exit codes: 0 ok, 1 usage, 2 data or validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .errors import NumericError, PadActionError

log = logging.getLogger("padaction")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def _load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise PadActionError(f"{p}: invalid JSON ({e})") from None


def _section(cfg: dict, key: str) -> dict:
    return dict(cfg.get(key, {}))


def _seed(args, cfg) -> int:
    return args.seed if args.seed is not None else int(cfg.get("seed", 0))


def _require_dir(path, what) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {p}")
    return p


def _require_file(path, what) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


# --- commands ---------------------------------------------------------------------

def cmd_synth_gen(args, cfg, seed):
    from .synth.video import BenchmarkConfig, make_benchmark, write_benchmark
    bench = BenchmarkConfig.from_json(cfg.get("benchmark", cfg))
    if args.videos_per_cell is not None:
        bench.videos_per_cell = args.videos_per_cell
    if args.frames is not None:
        bench.n_frames = args.frames
    manifest = make_benchmark(bench, seed)
    write_benchmark(manifest, args.out, frames=not args.no_frames, jobs=args.jobs)
    return Path(args.out), {"videos": len(manifest["entries"]), "config": bench.to_json()}, {
        "videos": len(manifest["entries"]), "frames_per_video": bench.n_frames}


def _templates(names):
    from .synth.templates import FAMILIES, get_template
    return [get_template(n) for n in (names or FAMILIES)]


def _locate_config(cfg):
    from .locate import LocateConfig
    return LocateConfig(**_section(cfg, "locate"))


def cmd_locate(args, cfg, seed):
    from .locate import locate_overlay
    from .parse import FrameDirectory
    frames = FrameDirectory(_require_dir(args.frames, "frames"))
    if len(frames) == 0:
        raise PadActionError(f"no frame_NNNNNN.png files in {args.frames}")
    lc = _locate_config(cfg)
    placement = locate_overlay(frames, _templates(args.templates), seed, lc, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if placement is None:
        _write_json(out / "placement.json", {"found": False})
        metrics = {"found": False}
    else:
        d = placement.to_json()
        d["found"] = True
        _write_json(out / "placement.json", d)
        metrics = {"found": True, "template": placement.template_name, "inliers": placement.inlier_count}
    return out, {"locate": asdict(lc), "frames": str(args.frames)}, metrics


def cmd_parse(args, cfg, seed):
    from .locate import OverlayPlacement
    from .parse import (
        FrameDirectory, ParserConfig, estimate_centers, normalize_track, parse_video, write_parse_outputs,
    )
    from .synth.templates import get_template
    frames = FrameDirectory(_require_dir(args.frames, "frames"))
    pd = json.loads(_require_file(args.placement, "placement file").read_text())
    if not pd.get("found", True):
        raise PadActionError(f"{args.placement}: no overlay was located; nothing to parse")
    placement = OverlayPlacement.from_json(pd)
    pc = ParserConfig(**_section(cfg, "parser"))
    template = get_template(placement.template_name)
    result = parse_video(frames, placement, template, pc, video_id=args.video_id, fps=args.fps)
    centers, flags = estimate_centers(result.centroids, [f.grid for f in result.raw.frames],
                                      [s.center for s in template.sticks])
    norm = normalize_track(result.raw, result.centroids, centers, pc)
    write_parse_outputs(args.out, result, norm, flags)
    return Path(args.out), {"parser": asdict(pc), "placement": pd}, {"frames": len(result.raw.frames)}


def cmd_filter(args, cfg, seed):
    from .core import read_track
    from .curate import DEFAULT_SEGMENT_LEN, filter_segments, segment_track, write_segments
    seg_len = args.segment_len or int(cfg.get("segment_len", DEFAULT_SEGMENT_LEN))
    segments = []
    for path in args.tracks:
        track = read_track(_require_file(path, "track file"))
        if not hasattr(track.frames[0], "grid"):
            raise PadActionError(f"{path}: filtering needs a raw track (kind=raw)")
        segments.extend(segment_track(track, seg_len))
    result = filter_segments(segments)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_segments(sorted(result.kept + result.discarded, key=lambda s: (s.video_id, s.start_frame)),
                   out / "segments.jsonl")
    metrics = {"segments": len(segments), "kept": len(result.kept),
               "kept_fraction": round(result.kept_fraction, 12)}
    return out, {"segment_len": seg_len, "tracks": [str(p) for p in args.tracks]}, metrics


def cmd_eval_parser(args, cfg, seed):
    from .curate import PipelineParams, evaluate_parser
    from .parse import ParserConfig
    manifest = json.loads(_require_file(args.manifest, "manifest").read_text())
    params = PipelineParams(_locate_config(cfg), ParserConfig(**_section(cfg, "parser")), seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = evaluate_parser(manifest, params, jobs=args.jobs, tiers=args.tiers, out_path=out / "eval_report.json")
    metrics = {tier: v["overall"] for tier, v in report["tiers"].items()}
    return out, {"locate": asdict(params.locate), "parser": asdict(params.parser), "tiers": args.tiers}, metrics


def _env_config(cfg, args):
    from .harness.env import EnvConfig
    if getattr(args, "env_config", None):
        return EnvConfig.load(_require_file(args.env_config, "env config"))
    return EnvConfig.from_json(_section(cfg, "env")) if "env" in cfg else EnvConfig()


def cmd_train(args, cfg, seed):
    from .policy.flow import TrainConfig
    from .policy.train import save_checkpoint, train_bc
    tc = TrainConfig.from_json(_section(cfg, "train"))
    if args.steps is not None:
        decay = min(tc.decay_steps, args.steps // 2)
        warm = min(tc.warmup_steps, args.steps - decay)
        tc = replace(tc, warmup_steps=warm, stable_steps=args.steps - warm - decay, decay_steps=decay)
    if args.data:
        data = np.load(_require_file(args.data, "dataset"))
        obs, chunks = data["obs"], data["chunks"]
        source = str(args.data)
    else:
        from .harness.agents import collect_dataset
        env = _env_config(cfg, args)
        obs, chunks = collect_dataset(args.collect, env, seed)
        source = f"oracle:{args.collect}"
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result = train_bc(obs, chunks, tc, seed, log_path=out / "training_log.jsonl")
    save_checkpoint(out / "checkpoint.bin", result, extra={"seed": seed, "data": source})
    final = result.log[-1]["loss"] if result.log else None
    return out, {"train": tc.to_json(), "data": source}, {"steps": result.step, "final_loss": final}


def cmd_rollout(args, cfg, seed):
    from .harness.agents import ModelPolicy, RandomPolicy, oracle_policy, rollout_policy
    from .policy.train import load_checkpoint
    env = _env_config(cfg, args)
    if args.policy == "model":
        if not args.checkpoint:
            raise UsageError("--checkpoint is required with --policy model")
        ck = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
        if ck.config.obs_size != env.resolution:
            raise PadActionError(f"{args.checkpoint}: model expects {ck.config.obs_size}px observations, env renders {env.resolution}px")
        policy = ModelPolicy(ck.model if args.raw_weights else ck.ema, ck.config, seed)
    elif args.policy == "oracle":
        policy = oracle_policy
    else:
        policy = RandomPolicy(seed)
    report = rollout_policy(policy, env, args.episodes, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "rollout.json", {
        "success_rate": report.success_rate, "episodes": report.episodes, "successes": report.successes,
        "lengths": report.lengths, "final_hashes": [h[-1] for h in report.hashes],
    })
    return out, {"env": env.to_json(), "policy": args.policy, "episodes": args.episodes}, {
        "success_rate": report.success_rate}


def cmd_replay_check(args, cfg, seed):
    from .harness.env import (
        EnvConfig, PauseSchedule, first_divergence, random_actions, record_rollout, replay_with_pauses,
        write_trajectory,
    )
    env = _env_config(cfg, args) if ("env" in cfg or args.env_config) else EnvConfig()
    rng = np.random.default_rng(seed)
    actions = random_actions(args.steps, rng)
    plain = record_rollout(actions, args.steps, seed, env)
    schedule = PauseSchedule.random(args.steps, args.pauses, rng, (args.min_ms, args.max_ms))
    paused = replay_with_pauses(actions, seed, schedule, env)
    div = first_divergence(plain, paused)
    print("divergence: none" if div is None else f"divergence: step {div}")
    out = None
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_trajectory(plain, out / "trajectory.padtraj", env)
    metrics = {"steps": args.steps, "pauses": args.pauses, "first_divergence": div}
    return out, {"env": env.to_json(), "steps": args.steps, "pauses": args.pauses}, metrics


COMMANDS = {
    "synth-gen": cmd_synth_gen,
    "locate": cmd_locate,
    "parse": cmd_parse,
    "filter": cmd_filter,
    "eval-parser": cmd_eval_parser,
    "train": cmd_train,
    "rollout": cmd_rollout,
    "replay-check": cmd_replay_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON pipeline config; flags override its fields")
    common.add_argument("--seed", type=int, help="master seed (default: config 'seed' or 0)")
    common.add_argument("--jobs", type=int, default=1, help="worker count; never changes outputs")
    common.add_argument("--verbose", "-v", action="store_true")
    common.add_argument("--json", action="store_true", help="print the run summary as JSON on stdout")

    p = _Parser(prog="padaction", description="Gamepad action extraction, curation and policy toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth-gen", parents=[common], help="render a synthetic overlay benchmark")
    s.add_argument("--out", required=True)
    s.add_argument("--videos-per-cell", type=int)
    s.add_argument("--frames", type=int, help="frames per video")
    s.add_argument("--no-frames", action="store_true", help="write manifest and truth only")

    s = sub.add_parser("locate", parents=[common], help="find the overlay in a frame directory")
    s.add_argument("--frames", required=True)
    s.add_argument("--templates", nargs="*", help="template names (default: all built-in)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("parse", parents=[common], help="read per-frame actions from a located overlay")
    s.add_argument("--frames", required=True)
    s.add_argument("--placement", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--video-id", default="video")
    s.add_argument("--fps", type=float, default=60.0)

    s = sub.add_parser("filter", parents=[common], help="segment raw tracks and apply the density rule")
    s.add_argument("tracks", nargs="+")
    s.add_argument("--segment-len", type=int)
    s.add_argument("--out", required=True)

    s = sub.add_parser("eval-parser", parents=[common], help="score locate+parse against benchmark truth")
    s.add_argument("--manifest", required=True)
    s.add_argument("--tiers", nargs="*")
    s.add_argument("--out", required=True)

    s = sub.add_parser("train", parents=[common], help="train the flow-matching policy")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help=".npz with 'obs' (N,S,S,3) uint8 and 'chunks' (N,H,D)")
    src.add_argument("--collect", type=int, help="collect this many oracle pairs from the toy env")
    s.add_argument("--env-config")
    s.add_argument("--steps", type=int, help="total optimizer steps (rescales the schedule)")
    s.add_argument("--out", required=True)

    s = sub.add_parser("rollout", parents=[common], help="evaluate a policy in the toy env")
    s.add_argument("--policy", choices=("model", "oracle", "random"), default="model")
    s.add_argument("--checkpoint")
    s.add_argument("--raw-weights", action="store_true", help="use raw instead of EMA weights")
    s.add_argument("--env-config")
    s.add_argument("--episodes", type=int, default=20)
    s.add_argument("--out", required=True)

    s = sub.add_parser("replay-check", parents=[common], help="paused vs unpaused replay determinism")
    s.add_argument("--steps", type=int, default=10000)
    s.add_argument("--pauses", type=int, default=1000)
    s.add_argument("--min-ms", type=float, default=1.0)
    s.add_argument("--max-ms", type=float, default=50.0)
    s.add_argument("--env-config")
    s.add_argument("--out")
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
    except UsageError as e:
        print(f"padaction: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    t0 = time.monotonic()
    try:
        cfg = _load_config(args.config)
        seed = _seed(args, cfg)
        out, resolved, metrics = COMMANDS[args.command](args, cfg, seed)
    except UsageError as e:
        print(f"padaction: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"padaction: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PadActionError, ValueError, KeyError, OSError) as e:
        print(f"padaction: error: {e}", file=sys.stderr)
        return EXIT_DATA
    summary = {
        "command": args.command,
        "seed": seed,
        "config_hash": hashlib.sha256(_canonical(resolved).encode()).hexdigest(),
        "metrics": metrics,
    }
    # the file stays byte-identical across runs; wall time goes to stdout only
    if out is not None:
        _write_json(Path(out) / "summary.json", summary)
    wall = round(time.monotonic() - t0, 3)
    if args.json:
        print(json.dumps(dict(summary, wall_time_s=wall), sort_keys=True))
    else:
        log.info("done in %.3fs", wall)
        if args.verbose:
            print(json.dumps(metrics, sort_keys=True))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
