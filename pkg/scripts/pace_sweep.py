"""Pace-parameter sensitivity: mean feedback-session accuracy per (lambda0, delta_lambda) cell.

Unlike ``jointbci sweep`` (one seed per cell) this averages each cell over
several simulated subjects.

    python3 scripts/pace_sweep.py --seeds 5 --out results/pace.csv
"""

import argparse
import csv
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from jointbci.config import default_config, load_config
from jointbci.paradigm import run_experiment


def cell(cfg, lambda0, delta_lambda, seed):
    rep = run_experiment(cfg, pace=(lambda0, delta_lambda), seed=seed).report
    return float(np.mean(rep.accuracy[1:]))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--lambda0", default="0.2,0.4,0.6,0.8")
    p.add_argument("--dlambda", default="0.05,0.10,0.15,0.20")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out")
    args = p.parse_args(argv)
    cfg = load_config(args.config) if args.config else default_config()
    l0 = [float(v) for v in args.lambda0.split(",")]
    dl = [float(v) for v in args.dlambda.split(",")]
    jobs = [(a, b, s) for a in l0 for b in dl for s in range(args.seeds)]

    with ProcessPoolExecutor(args.workers) as ex:
        accs = list(ex.map(cell, [cfg] * len(jobs), *zip(*jobs)))
    table = {}
    for (a, b, _), acc in zip(jobs, accs):
        table.setdefault((a, b), []).append(acc)

    print("lambda0 \\ dL " + " ".join(f"{b:>7.2f}" for b in dl))
    for a in l0:
        print(f"{a:>12.2f} " + " ".join(f"{np.mean(table[a, b]):>7.3f}" for b in dl))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["lambda0", "delta_lambda", "mean_accuracy", "n_seeds"])
            for (a, b), v in table.items():
                w.writerow([a, b, np.mean(v), len(v)])


if __name__ == "__main__":
    main()
