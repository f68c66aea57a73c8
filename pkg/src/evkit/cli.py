"""Command-line front end for the event pre-training toolkit.

Subcommands: gen-data, simulate, voxelize, variant, verify, train, stats.
Machine-readable results go to stdout; progress and the effective config
(as JSON) go to stderr. Every stochastic subcommand requires a seed, either
via --seed or the EVKIT_SEED environment variable; there is no wall-clock
fallback. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset as ds
from . import model as toy
from . import report
from . import verify as ver
from .events import make_variant, voxelize
from .evt_io import read_evt, write_evt
from .motion import read_clip
from .simulator import DvsConfig, default_config, simulate

USAGE_ERROR = 2


def _load_config_file(path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith((".toml", ".tml")):
        try:
            import tomllib
        except ModuleNotFoundError:
            import tomli as tomllib
        return tomllib.loads(text.decode())
    return json.loads(text.decode())


def _resolve_seed(args, parser, required: bool) -> int | None:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("EVKIT_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            parser.error(f"EVKIT_SEED must be an integer, got {env!r}")
    if required:
        parser.error("this subcommand is stochastic: pass --seed or set EVKIT_SEED")
    return None


def _echo_config(name: str, config: dict) -> None:
    print(f"[evkit] {name} config: {json.dumps(config, sort_keys=True)}",
          file=sys.stderr)


def _dvs_from_args(args, seed: int) -> DvsConfig:
    """Built-in defaults, overlaid by a config file, overlaid by flags."""
    values = default_config().to_json_dict()
    if args.config:
        file_cfg = _load_config_file(args.config)
        values.update({k: v for k, v in file_cfg.items() if k in values})
    for field in ("pos_thres", "neg_thres", "sigma_thres", "cutoff_hz",
                  "leak_rate_hz", "shot_noise_rate_hz", "timestamp_resolution"):
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = flag
    if getattr(args, "noiseless", False):
        values["noiseless"] = True
    values["seed"] = seed
    return DvsConfig(**values)


def _add_dvs_flags(sub) -> None:
    sub.add_argument("--config", help="JSON/TOML file with simulator settings")
    for field in ("pos-thres", "neg-thres", "sigma-thres", "cutoff-hz",
                  "leak-rate-hz", "shot-noise-rate-hz", "timestamp-resolution"):
        sub.add_argument(f"--{field}", type=float, default=None)
    sub.add_argument("--noiseless", action="store_true",
                     help="disable threshold mismatch, leak and shot noise")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evkit",
        description="Event-camera data synthesis, verification and toy training.")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("gen-data", help="build a shard dataset from images")
    p.add_argument("image_dir")
    p.add_argument("out_dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("--frames", type=int, default=12)
    p.add_argument("--fps", type=float, default=30.0)
    p.add_argument("--workers", type=int, default=1)
    _add_dvs_flags(p)

    p = subs.add_parser("simulate", help="convert a PGM clip directory to EVT0")
    p.add_argument("clip_dir")
    p.add_argument("out_evt")
    p.add_argument("--seed", type=int)
    _add_dvs_flags(p)

    p = subs.add_parser("voxelize", help="accumulate an EVT0 stream into a voxel")
    p.add_argument("in_evt")
    p.add_argument("--bins", type=int, default=5)
    p.add_argument("-o", "--out", help="write the voxel as .npy")

    p = subs.add_parser("variant", help="derive a sparse/noise robustness variant")
    p.add_argument("in_evt")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--kind", choices=("sparse", "noise", "sparse_noise"),
                   required=True)
    p.add_argument("--noise-frac", type=float, default=0.005)
    p.add_argument("--seed", type=int)

    p = subs.add_parser("verify", help="run an invariant suite")
    p.add_argument("suite", choices=sorted(ver.SUITES))
    p.add_argument("--seed", type=int)

    p = subs.add_parser("train", help="run the staged trainer on a dataset")
    p.add_argument("dataset_dir")
    p.add_argument("--schedule", required=True,
                   help="TOML/JSON schedule: {stages: [{stage, steps, lr, ...}]}")
    p.add_argument("--out", default="train_out")
    p.add_argument("--seed", type=int)

    p = subs.add_parser("stats", help="summarize an EVT0 stream")
    p.add_argument("in_evt")
    p.add_argument("--out-dir", help="also write histogram CSV + figure here")

    return parser


def cmd_gen_data(args, parser) -> int:
    seed = _resolve_seed(args, parser, required=True)
    dvs = _dvs_from_args(args, seed)
    config = ds.BuildConfig(n_frames=args.frames, fps=args.fps, bins=args.bins,
                            dvs=dvs)
    _echo_config("gen-data", {"seed": seed, **config.to_json_dict()})
    manifest = ds.build_dataset(args.image_dir, args.out_dir, config,
                                seed=seed, workers=args.workers)
    print(f"records={len(manifest['records'])}")
    print(f"manifest={Path(args.out_dir) / 'manifest.json'}")
    return 0


def cmd_simulate(args, parser) -> int:
    seed = _resolve_seed(args, parser, required=True)
    config = _dvs_from_args(args, seed)
    _echo_config("simulate", config.to_json_dict())
    clip = read_clip(args.clip_dir)
    stream = simulate(clip, config)
    write_evt(args.out_evt, stream, generator_config=config.to_json_dict())
    print(f"events={len(stream)}")
    print(f"out={args.out_evt}")
    return 0


def cmd_voxelize(args, parser) -> int:
    stream = read_evt(args.in_evt)
    voxel = voxelize(stream, args.bins)
    total = float(voxel.data.sum())
    nonzero = int(np.count_nonzero(voxel.data))
    print(f"shape={voxel.height}x{voxel.width}x{voxel.bins}")
    print(f"polarity_sum={total:g}")
    print(f"nonzero_cells={nonzero}")
    if args.out:
        np.save(args.out, voxel.data)
        meta = {"width": voxel.width, "height": voxel.height, "bins": voxel.bins}
        Path(str(args.out) + ".meta.json").write_text(
            json.dumps(meta, sort_keys=True) + "\n")
        print(f"out={args.out}")
    return 0


def cmd_variant(args, parser) -> int:
    seed = _resolve_seed(args, parser, required=True)
    stream = read_evt(args.in_evt)
    out = make_variant(stream, args.kind, noise_frac=args.noise_frac, seed=seed)
    write_evt(args.out, out, generator_config={
        "kind": args.kind, "noise_frac": args.noise_frac, "seed": seed,
        "source_events": len(stream)})
    print(f"events={len(out)} (from {len(stream)})")
    return 0


def cmd_verify(args, parser) -> int:
    seed = _resolve_seed(args, parser, required=True)
    checks = ver.SUITES[args.suite](seed=seed)
    width = max(len(c.name) for c in checks)
    for c in checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status}  {c.name:<{width}}  {c.detail}")
    return 0 if ver.all_passed(checks) else 1


def _stage_from_dict(d: dict) -> toy.StageConfig:
    stage = d.get("stage")
    if stage is None:
        raise ValueError("schedule stage entry missing 'stage'")
    fields = {f.name for f in dataclasses.fields(toy.StageConfig)}
    unknown = set(d) - fields
    if unknown:
        raise ValueError(f"unknown schedule keys: {sorted(unknown)}")
    base = toy.StageConfig.defaults_for(stage)
    return dataclasses.replace(base, **{k: v for k, v in d.items() if k != "stage"})


def cmd_train(args, parser) -> int:
    seed = _resolve_seed(args, parser, required=True)
    schedule_cfg = _load_config_file(args.schedule)
    stages = [_stage_from_dict(d) for d in schedule_cfg.get("stages", [])]
    _echo_config("train", {"seed": seed, "stages": [
        dataclasses.asdict(s) for s in stages]})
    samples = ds.load_dataset(args.dataset_dir)
    if not samples:
        raise RuntimeError(f"no samples found under {args.dataset_dir}")

    model_cfg = None
    if "model" in schedule_cfg:
        model_cfg = toy.ModelConfig(**schedule_cfg["model"])
    model, trace = toy.train_stages(samples, stages, seed=seed,
                                    config=model_cfg, out_dir=args.out)
    out = Path(args.out)
    report.render_loss_curve(trace, out / "loss_curve.png")
    for sc in stages:
        stage_rows = [r for r in trace if r.stage == sc.stage]
        if stage_rows:
            print(f"{sc.stage}: first={stage_rows[0].loss:.6f} "
                  f"last={stage_rows[-1].loss:.6f} steps={len(stage_rows)}")
    print(f"trace={out / 'loss_trace.csv'}")
    print(f"figure={out / 'loss_curve.png'}")
    return 0


def cmd_stats(args, parser) -> int:
    stream = read_evt(args.in_evt)
    pos = int(np.count_nonzero(stream.p == 1))
    neg = int(np.count_nonzero(stream.p == -1))
    print("key,value")
    print(f"events,{len(stream)}")
    print(f"width,{stream.width}")
    print(f"height,{stream.height}")
    print(f"duration_us,{stream.duration_us}")
    print(f"positive,{pos}")
    print(f"negative,{neg}")
    values, n_pixels = report.pixel_count_histogram(stream)
    if args.out_dir:
        out = report.ensure_out_dir(args.out_dir)
        report.write_histogram_csv(values, n_pixels, out / "density_hist.csv")
        report.render_density_histogram(
            values, n_pixels, out / "density_hist.png",
            title=f"Event density: {Path(args.in_evt).name}")
        print(f"histogram_csv,{out / 'density_hist.csv'}")
        print(f"histogram_png,{out / 'density_hist.png'}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "simulate": cmd_simulate,
    "voxelize": cmd_voxelize,
    "variant": cmd_variant,
    "verify": cmd_verify,
    "train": cmd_train,
    "stats": cmd_stats,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args, parser)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"evkit: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
