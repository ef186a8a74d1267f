"""Command-line entry points: train, eval, sweep, analyze.

Exit codes: 0 success, 2 bad configuration or usage, 3 training aborted on a
non-finite loss.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .errors import ConfigError, NumericError, UsageError
from .telemetry import read_telemetry, summarize
from .trainer import (
    RunDirSink,
    TrainConfig,
    ablate,
    desk_config,
    dump_config,
    evaluate,
    load_config,
    parse_config_text,
    parse_overrides,
    run_training,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SWEEP_AXES = ("utd", "width", "depth", "ablation")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (default: built-in desk-scale preset)")
    p.add_argument("--seed", type=int)
    p.add_argument("--utd", type=int)
    p.add_argument("--env")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--out", default="runs/latest", help="output directory")
    p.add_argument("--ablate", action="append", default=[], metavar="FLAG")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--telemetry-every", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override any config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simbav2", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("train", help="run one training job"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint with the deterministic policy")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("--episodes", type=int)
    p_sweep = sub.add_parser("sweep", help="sequential runs along one axis")
    _common(p_sweep)
    p_sweep.add_argument("--axis", required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_an = sub.add_parser("analyze", help="summarize a run's telemetry")
    p_an.add_argument("run_dir")
    return parser


def resolve_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else desk_config()
    overrides: dict[str, str] = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value
    named = {
        "seed": args.seed, "utd": args.utd, "env": args.env, "total_steps": args.steps,
        "eval_interval": args.eval_every, "telemetry_interval": args.telemetry_every,
        "checkpoint_interval": args.checkpoint_every,
    }
    overrides.update({k: str(v) for k, v in named.items() if v is not None})
    cfg = parse_overrides(overrides, cfg)
    return ablate(cfg, args.ablate) if args.ablate else cfg


def _train_one(cfg: TrainConfig, out: Path) -> float:
    out.mkdir(parents=True, exist_ok=True)
    text = dump_config(cfg)
    print(text, end="", flush=True)
    (out / "config.resolved").write_text(text)
    sink = RunDirSink(out)
    try:
        run = run_training(cfg, sink=sink)
        sink.checkpoint(run.step, ckpt.dump_run(run))
    finally:
        sink.close()
    final = run.metrics[-1][1] if run.metrics else math.nan
    print(f"final_eval_return = {final:.6g}", flush=True)
    return final


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    _train_one(cfg, Path(args.out))
    return EXIT_OK


def cmd_eval(args) -> int:
    path = Path(args.checkpoint)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    _, meta = ckpt.unpack(blob)
    cfg = parse_config_text(meta["config"])
    episodes = cfg.eval_episodes if args.episodes is None else args.episodes
    print(dump_config(replace(cfg, eval_episodes=episodes)), end="", flush=True)
    run = ckpt.restore_run(blob, cfg)
    returns = evaluate(run.agent, cfg.env, episodes, cfg.seed, 0)
    print(f"eval_return_mean = {np.mean(returns):.6g}")
    print(f"eval_return_std = {np.std(returns):.6g}")
    return EXIT_OK


def _sweep_config(cfg: TrainConfig, axis: str, value: str) -> TrainConfig:
    if axis == "ablation":
        return ablate(cfg, value)
    key = {"utd": "utd", "width": "critic_d_h", "depth": "critic_blocks"}[axis]
    return parse_overrides({key: value}, cfg)


def cmd_sweep(args) -> int:
    if args.axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {args.axis!r}; choose from {SWEEP_AXES}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    base = resolve_config(args)
    configs = [(v, _sweep_config(base, args.axis, v)) for v in values]  # validate all before running any
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, cfg in configs:
        final = _train_one(cfg, out / f"{args.axis}_{value}")
        rows.append((value, final))
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("axis_value", "final_eval_return"))
        writer.writerows((v, f"{r:.9g}") for v, r in rows)
    return EXIT_OK


def cmd_analyze(args) -> int:
    run_dir = Path(args.run_dir)
    path = run_dir / "telemetry.csv"
    if not path.is_file():
        raise ConfigError(f"no telemetry.csv in {run_dir}")
    resolved = run_dir / "config.resolved"
    if resolved.is_file():
        print(resolved.read_text(), end="")
    summary = summarize(read_telemetry(path))
    if summary["empty"]:
        print("telemetry series is empty (no updates were recorded)")
    else:
        for name, stats in summary.items():
            if isinstance(stats, dict):
                print(f"{name}: min={stats['min']:.6g} max={stats['max']:.6g} mean={stats['mean']:.6g}")
        print(f"enc_elr_drift = {summary['enc_elr_drift']:.6g}")
        print(f"pred_elr_drift = {summary['pred_elr_drift']:.6g}")
    (run_dir / "telemetry_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "analyze": cmd_analyze}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, UsageError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as err:
        print(f"aborted: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
