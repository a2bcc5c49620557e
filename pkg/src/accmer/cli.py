"""``accmer`` command line: train / bench / eval / simulate.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import subprocess
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    PRESETS, ConfigError, RngStreams, load_config, parse_config_text, serialize_config,
)
from .env import PredatorPrey
from .learner import evaluate, load_params, train_run
from .locality_bench import CacheConfig, compare_modes, format_table, run_bench, simulate_cache, slots_to_lines
from .sampler import read_trace

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

log = logging.getLogger("accmer")


class InputError(Exception):
    """Bad user input other than config values (missing or malformed files)."""


def build_id() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument("--seed", type=int, help="run seed (ACCMER_SEED overrides)")
    p.add_argument("--out", type=Path, default=Path("runs/latest"), help="output directory")


def _parse_set(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _resolve_config(args, **extra):
    overrides = _parse_set(getattr(args, "set", None))
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.update({k: v for k, v in extra.items() if v is not None})
    return load_config(args.config, overrides, getattr(args, "preset", None))


def _cache_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--capacity-bytes", type=int, default=1 << 20)
    p.add_argument("--line-bytes", type=int, default=64)
    p.add_argument("--associativity", type=int, default=8, help="ways; 0 = fully associative")
    p.add_argument("--transition-bytes", type=int, default=256)


def _cache_config(args) -> CacheConfig:
    try:
        return CacheConfig(args.capacity_bytes, args.line_bytes, args.associativity,
                           args.transition_bytes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# -- subcommands --------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _resolve_config(
        args, reuse_ratio=args.alpha, sampler_mode=args.mode, total_steps=args.steps,
        batch_size=args.batch_size, buffer_capacity=args.buffer,
    )
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    manifest = {
        "command": "train",
        "config": cfg.to_dict(),
        "build_id": build_id(),
        "started": _now(),
        "finished": None,
        "status": "running",
        "profiler_output": str(args.profiler_output) if args.profiler_output else None,
        "artifacts": {
            "config": "config.txt", "curves": "curves.csv", "trace": "trace.bin",
            "timing": "timing.json",
            "checkpoints": ["checkpoints/params_final.bin", "checkpoints/buffer_final.bin"],
        },
    }
    _write_manifest(out, manifest)
    try:
        progress = None
        if args.verbose:
            def progress(row):
                print(f"step {row['train_step']:>8}  episode {row['episode']:>6}  "
                      f"eval {row['eval_mean_reward']:.3f}  eps {row['epsilon']:.3f}",
                      file=sys.stderr)
        result = train_run(cfg, out, progress)
    except BaseException:
        manifest.update(status="failed", finished=_now())
        _write_manifest(out, manifest)
        raise
    manifest.update(status="ok", finished=_now(), episodes=result.episodes,
                    updates=result.updates)
    _write_manifest(out, manifest)
    final = result.curves[-1]["eval_mean_reward"] if result.curves else float("nan")
    print(f"trained {cfg.total_steps} steps, {result.episodes} episodes; "
          f"final eval reward {final:.3f}; artifacts in {out}")
    return EXIT_OK


def _write_manifest(out: Path, manifest: dict) -> None:
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_bench(args) -> int:
    cfg = _resolve_config(
        args, reuse_ratio=args.alpha, batch_size=args.batch_size, buffer_capacity=args.buffer,
    )
    cache = _cache_config(args)
    if args.trace:
        traces = {}
        for item in args.trace:
            mode, sep, path = item.partition("=")
            if not sep:
                raise ConfigError(f"--trace expects MODE=PATH, got {item!r}")
            traces[mode] = _load_trace(Path(path))
        report = compare_modes(cache, traces, cfg.reuse_window, reuse_size=cfg.reuse_size)
    else:
        report = run_bench(cache, cfg.buffer_capacity, cfg.batch_size, cfg.reuse_ratio,
                           args.calls, cfg.seed, cfg.weight_decay)
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(format_table(report))
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.episodes < 1:
        raise ConfigError("need >=1 episode")
    if not args.checkpoint.exists():
        raise InputError(f"checkpoint not found: {args.checkpoint}")
    try:
        learner, header = load_params(args.checkpoint)
    except (ValueError, KeyError) as exc:
        raise InputError(f"corrupt checkpoint {args.checkpoint}: {exc}") from None
    raw = dict(header.get("config") or {})
    if args.config is not None:
        raw.update(parse_config_text(args.config.read_text()))
    cfg = load_config(None, {**raw, **({"seed": args.seed} if args.seed is not None else {})})
    env = PredatorPrey(cfg)
    if (env.obs_dim, env.state_dim, cfg.n_agents) != (learner.obs_dim, learner.state_dim,
                                                      learner.n_agents):
        raise ConfigError("config does not match checkpoint dimensions")
    returns = evaluate(learner, env, args.episodes, RngStreams(cfg.seed).fresh("eval-cli"),
                       args.epsilon)
    mean, std = float(np.mean(returns)), float(np.std(returns))
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "eval.json").write_text(json.dumps(
        {"checkpoint": str(args.checkpoint), "episodes": args.episodes, "seed": cfg.seed,
         "mean": mean, "std": std, "returns": returns.tolist()}, indent=2) + "\n")
    print(f"mean reward {mean:.4f} ± {std:.4f} over {args.episodes} episodes")
    return EXIT_OK


def _load_trace(path: Path):
    if not path.exists():
        raise InputError(f"trace not found: {path}")
    try:
        return read_trace(path)
    except ValueError as exc:
        raise InputError(f"malformed trace {path}: {exc}") from None


def cmd_simulate(args) -> int:
    if args.config is not None:
        load_config(args.config)  # validated for consistency; not otherwise used
    cache = _cache_config(args)
    trace = _load_trace(args.trace)
    hits, misses = simulate_cache(slots_to_lines(trace, cache), cache)
    total = hits + misses
    result = {"trace": str(args.trace), "accesses": len(trace), "hits": hits, "misses": misses,
              "miss_rate": misses / total if total else 0.0,
              "cache": {"capacity_bytes": cache.capacity_bytes, "line_bytes": cache.line_bytes,
                        "associativity": cache.associativity,
                        "transition_bytes": cache.transition_bytes}}
    args.out.mkdir(parents=True, exist_ok=True)
    (args.out / "simulate.json").write_text(json.dumps(result, indent=2) + "\n")
    print(json.dumps(result))
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="accmer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"accmer {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the training loop")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--alpha", type=float, help="reuse ratio")
    p.add_argument("--mode", choices=("uniform", "prioritized", "accmer"))
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--buffer", type=int, help="replay capacity")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="any config field")
    p.add_argument("--profiler-output", type=Path,
                   help="path of an external profiler report, recorded in the manifest")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="compare sampler modes on a simulated cache")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--buffer", type=int)
    p.add_argument("--calls", type=int, default=5000, help="sampling calls per mode")
    p.add_argument("--trace", action="append", metavar="MODE=PATH",
                   help="use recorded traces instead of a live workload")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    _cache_args(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("eval", help="greedy evaluation of a parameter checkpoint")
    _common(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="run the cache simulator on a trace file")
    _common(p)
    p.add_argument("--trace", type=Path, required=True)
    _cache_args(p)
    p.set_defaults(func=cmd_simulate)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)  # unknown flags exit with status 2
    try:
        return args.func(args)
    except (ConfigError, InputError) as exc:
        print(f"accmer {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surfaced as a runtime failure
        print(f"accmer {args.command}: runtime error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
