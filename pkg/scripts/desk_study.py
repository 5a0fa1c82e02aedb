"""Desk-scale comparison of methods on one experiment.

    python3 scripts/desk_study.py sho-partial --methods gp-static gp-dynamic --seeds 5

Each run writes its directory under ``--out``; a summary line per method is
printed and stored with the aggregated series.
"""

import argparse
from pathlib import Path

import numpy as np

from sympolicy.environments import PRESETS
from sympolicy.experiments import METHODS, ExperimentConfig, aggregate_runs, run_experiment, write_summary


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("experiment", choices=sorted(PRESETS))
    ap.add_argument("--methods", nargs="+", default=["gp-static", "gp-dynamic", "random-search"], choices=METHODS)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--pop", type=int, default=200)
    ap.add_argument("--gens", type=int, default=25)
    ap.add_argument("--validation", type=int, default=128)
    ap.add_argument("--out", type=Path, default=Path("results/desk"))
    args = ap.parse_args()

    for method in args.methods:
        cfg = ExperimentConfig(args.experiment, method, args.pop, args.gens, runs=args.seeds,
                               validation_size=args.validation)
        records = []
        for k in range(args.seeds):
            out = args.out / args.experiment / method / f"seed{k}"
            rec = run_experiment(cfg, k, out)
            print(f"  {method} seed {k}: train {rec.train_fitness:.2f} validation {rec.validation_fitness:.2f} "
                  f"({rec.wall_clock:.0f}s)", flush=True)
            records.append(rec)
        train = np.array([r.train_fitness for r in records])
        val = np.array([r.validation_fitness for r in records])
        write_summary(aggregate_runs(records), args.out / args.experiment / method)
        print(f"{method}: train {train.mean():.2f} ± {train.std():.2f}, validation best {val.max():.2f}")


if __name__ == "__main__":
    main()
