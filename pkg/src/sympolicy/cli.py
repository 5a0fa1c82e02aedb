"""Command line: ``sympolicy {run,replay,aggregate,list-presets}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .environments import PRESETS
from .experiments import (
    METHODS,
    ConfigError,
    ExperimentConfig,
    aggregate_runs,
    load_record,
    replay_policy,
    run_experiment,
    write_summary,
)
from .exprtree import ExprError
from .policies import PolicyError


def _timing(p: argparse.ArgumentParser):
    p.add_argument("--horizon", type=float, help="override the preset horizon")
    p.add_argument("--dt", type=float, help="override the preset step")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sympolicy", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment with one method")
    run.add_argument("--experiment", required=True, choices=sorted(PRESETS))
    run.add_argument("--method", required=True, choices=METHODS)
    run.add_argument("--pop", type=int, help="population size (default: preset)")
    run.add_argument("--gens", type=int, help="generations (default: preset)")
    run.add_argument("--latent", type=int, help="latent size for dynamic policies (default: preset)")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--runs", type=int, default=1)
    run.add_argument("--batch", type=int, default=32, help="training trials per evaluation")
    run.add_argument("--out", type=Path, default=Path("results"))
    _timing(run)

    rep = sub.add_parser("replay", help="evaluate a stored or written policy")
    rep.add_argument("policy", help="run directory, best_policy.txt / .params file, or expression text")
    rep.add_argument("--experiment", required=True, choices=sorted(PRESETS))
    rep.add_argument("--seed", type=int, default=0)
    rep.add_argument("--batch", type=int, default=128)
    rep.add_argument("--trajectory", type=Path, help="write a per-step CSV of the first trial")
    _timing(rep)

    agg = sub.add_parser("aggregate", help="summarise run directories of one experiment")
    agg.add_argument("runs", nargs="+", type=Path)
    agg.add_argument("--out", type=Path)

    sub.add_parser("list-presets", help="show the experiment presets")
    return ap


def _cmd_run(args) -> int:
    cfg = ExperimentConfig(args.experiment, args.method, args.pop, args.gens, args.latent, args.seed, args.runs,
                           args.batch, horizon=args.horizon, dt=args.dt, out=str(args.out))
    failed = 0
    for k in range(cfg.runs):
        out = args.out / f"{cfg.experiment}_{cfg.method}_seed{cfg.seed + k}"
        rec = run_experiment(cfg, k, out)
        failed += rec.status != "ok"
        val = "nan" if rec.validation_fitness is None else f"{rec.validation_fitness:.6g}"
        print(f"{out}: status={rec.status} validation={val} time={rec.wall_clock:.1f}s")
    return 1 if failed else 0


def _cmd_replay(args) -> int:
    res = replay_policy(args.policy, args.experiment, args.seed, args.batch, trajectory_csv=args.trajectory,
                        horizon=args.horizon, dt=args.dt)
    print(f"mean fitness {res.mean:.10g} over {len(res.fitness)} trials")
    if res.trajectory_path:
        print(f"trajectory written to {res.trajectory_path}")
    return 0


def _cmd_aggregate(args) -> int:
    summary = aggregate_runs([load_record(d) for d in args.runs])
    print(f"{summary.experiment} ({', '.join(summary.methods)}): {len(summary.validation)} runs")
    print(f"  final mean best fitness {summary.mean_best[-1]:.6g}" if summary.mean_best else "  no history")
    print(f"  best validation {summary.best_validation:.6g} (run {summary.best_run})")
    if args.out:
        print(f"  summary written to {write_summary(summary, args.out)}")
    return 0


def _cmd_presets(args) -> int:
    for e in PRESETS.values():
        print(f"{e.id:16s} N={e.population_size:<5d} G={e.generations:<4d} H={e.latent_size} "
              f"ops={','.join(e.operators)}  {e.description}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"run": _cmd_run, "replay": _cmd_replay, "aggregate": _cmd_aggregate, "list-presets": _cmd_presets}
    try:
        return handlers[args.command](args)
    except (ConfigError, ExprError, PolicyError, FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
