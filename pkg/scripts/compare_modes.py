"""Joint vs co-adaptive training on the simulated subject, averaged over seeds.

    python3 scripts/compare_modes.py --seeds 20 --out results/compare.csv
"""

import argparse
import csv
import sys

import numpy as np

from jointbci.config import default_config, load_config
from jointbci.paradigm import COADAPTIVE, JOINT, run_experiment


def summarise(reports):
    acc = np.array([r.accuracy for r in reports])
    sp = np.array([r.success_proportions for r in reports])
    dist = np.array([r.distances for r in reports])
    return acc, sp, dist


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--out", help="per-seed CSV")
    args = p.parse_args(argv)
    cfg = load_config(args.config) if args.config else default_config()
    seeds = range(args.first_seed, args.first_seed + args.seeds)

    rows, stats = [], {}
    for mode in (JOINT, COADAPTIVE):
        mcfg = cfg.with_updates(session={"mode": mode})
        reports = []
        for s in seeds:
            rep = run_experiment(mcfg, seed=s).report
            reports.append(rep)
            for summ in rep.sessions:
                rows.append([mode, s, summ.index, summ.accuracy, summ.success_proportion, summ.distance])
            print(f"{mode} seed {s}: {' '.join(f'{a:.3f}' for a in rep.accuracy)}", file=sys.stderr)
        stats[mode] = summarise(reports)

    n = len(seeds)
    for mode, (acc, sp, dist) in stats.items():
        print(f"\n{mode}")
        print("  accuracy    " + " ".join(f"{m:.3f}+-{e:.3f}" for m, e in
                                        zip(acc.mean(0), acc.std(0, ddof=1) / np.sqrt(n))))
        print("  success     " + " ".join(f"{m:.3f}" for m in sp.mean(0)))
        print("  distance    " + " ".join(f"{m:.3f}" for m in dist.mean(0)))
    diff = stats[JOINT][0][:, -1] - stats[COADAPTIVE][0][:, -1]
    print(f"\nfinal-session gap: {100 * diff.mean():.2f} pp (SE {100 * diff.std(ddof=1) / np.sqrt(n):.2f})")
    print(f"mean over feedback sessions: joint {stats[JOINT][0][:, 1:].mean():.3f}, "
          f"co-adaptive {stats[COADAPTIVE][0][:, 1:].mean():.3f}")

    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["mode", "seed", "session", "accuracy", "success_proportion", "distance"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
