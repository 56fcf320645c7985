"""Command-line entry point: ``lrslab run|verify-theory|compare|heatmap|sweep-granularity``."""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import harness
from .mdp import shipped_room
from .metrics import Heatmap, mean_distance_from_start


def _add_overrides(p: argparse.ArgumentParser) -> None:
    p.add_argument("config_path", nargs="?", help="experiment config file")
    p.add_argument("--config", dest="config_flag", help="experiment config file (same as the positional argument)")
    p.add_argument("--out", help="output directory (default: config output, then $%s/<name>)" % harness.OUTPUT_ROOT_ENV)
    p.add_argument("--seeds", help="seed list such as 1-10 or 1,3,5")
    p.add_argument("--episodes", type=int, help="episode budget T")
    p.add_argument("--room", choices=harness.ROOM_IDS)
    p.add_argument("--lrs", choices=harness.LRS_MODES)
    p.add_argument("--agent", choices=harness.AGENTS)


def _load(args) -> harness.ExperimentConfig:
    path = args.config_flag or args.config_path
    if path:
        cfg = harness.load_config(path)
    else:
        cfg = harness.ExperimentConfig(name="cli")
    if args.room and args.room != cfg.room:
        spec = shipped_room(args.room)
        cfg = dataclasses.replace(cfg, room=args.room, room_settings=harness.RoomSettings(spec.max_steps, spec.sticky_prob, spec.noop_starts))
    return cfg.with_overrides(
        seeds=harness.parse_seeds(args.seeds) if args.seeds else None,
        episodes=args.episodes,
        lrs=args.lrs,
        agent=args.agent,
    )


def _progress(res) -> None:
    wins = int(res.record.wins.sum())
    print(f"  seed {res.seed}: {len(res.record)} episodes, {wins} wins, first win {res.first_win or '-'}", flush=True)


def cmd_run(args) -> int:
    cfg = _load(args)
    print(f"running {cfg.name}: room {cfg.room}, agent {cfg.agent}, lrs {cfg.lrs}, granularity {cfg.granularity}, seeds {len(cfg.seeds)}")
    result = harness.run_experiment(cfg, args.out, _progress)
    s = result.summary
    print(f"AUC {s.mean:.4f} +/- {s.std:.4f}, success rate {s.success:.0%}")
    print(f"results in {result.directory}")
    return 0


def cmd_verify_theory(args) -> int:
    checks, table = harness.verify_theory(seed=args.seed)
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.detail}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "convergence_sweep.csv").write_text(table)
        print(f"sweep table written to {out / 'convergence_sweep.csv'}")
    else:
        print(table, end="")
    return 0 if all(c.passed for c in checks) else 1


def cmd_compare(args) -> int:
    a = harness.load_result(args.dir_a)
    b = harness.load_result(args.dir_b)
    print(harness.compare(a, b).text())
    return 0


def cmd_heatmap(args) -> int:
    result = harness.load_result(args.directory)
    hm: Heatmap = result.heatmap
    out = Path(args.out) if args.out else result.directory
    out.mkdir(parents=True, exist_ok=True)
    (out / "heatmap.csv").write_text(hm.to_csv())
    (out / "heatmap.pgm").write_bytes(hm.to_pgm())
    print(f"{hm.total} visits, mean distance from start {mean_distance_from_start(hm):.3f}")
    print(f"heatmap written to {out / 'heatmap.pgm'}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    rows = harness.sweep_granularity(cfg, args.out, _progress)
    print(f"{'variant':<10} {'AUC mean':>9} {'std':>7} {'p(lower than full)':>20}")
    for r in rows:
        print(f"{r.variant:<10} {r.summary.mean:9.4f} {r.summary.std:7.4f} {r.p_lower_than_full:20.4g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrslab", description="Language reward shaping experiments on grid rooms.")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="train every seed of a config and write run records")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify-theory", help="check shaping invariance and the gradient decomposition exactly")
    p.add_argument("--out", help="directory for the sweep CSV (default: print it)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_theory)
    p = sub.add_parser("compare", help="AUC statistics and one-sided rank tests for two run directories")
    p.add_argument("dir_a")
    p.add_argument("dir_b")
    p.set_defaults(func=cmd_compare)
    p = sub.add_parser("heatmap", help="sum the per-seed heatmaps of a run directory")
    p.add_argument("directory")
    p.add_argument("--out")
    p.set_defaults(func=cmd_heatmap)
    p = sub.add_parser("sweep-granularity", help="run full, Type-1 and Type-2 instructions from one config")
    _add_overrides(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (harness.ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
