"""Decoder accuracy as the montage shrinks from 20 to 3 electrodes.

The simulated subject always emits the full montage; only the decoder's
channel pick changes. With fewer than six channels the CSP pair count drops
so that ``2 * n_pairs`` still fits.

    python3 scripts/channel_ablation.py --seeds 10
"""

import argparse
import csv

import numpy as np

from jointbci.config import default_config, load_config
from jointbci.paradigm import COADAPTIVE, JOINT, run_experiment
from jointbci.signal import CHANNEL_SUBSETS


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out")
    args = p.parse_args(argv)
    cfg = load_config(args.config) if args.config else default_config()

    rows = []
    print("channels  mode         final   feedback-mean")
    for size, names in sorted(CHANNEL_SUBSETS.items(), reverse=True):
        pairs = min(cfg.decoder.n_pairs, len(names) // 2)
        for mode in (JOINT, COADAPTIVE):
            c = cfg.with_updates(session={"mode": mode}, decoder={"channels": tuple(names), "n_pairs": pairs})
            acc = np.array([run_experiment(c, seed=s).report.accuracy for s in range(args.seeds)])
            final, fb = acc[:, -1].mean(), acc[:, 1:].mean()
            rows.append([size, mode, pairs, final, fb])
            print(f"{size:>8}  {mode:<11} {final:6.3f}   {fb:6.3f}")
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["n_channels", "mode", "n_pairs", "final_accuracy", "feedback_mean_accuracy"])
            w.writerows(rows)


if __name__ == "__main__":
    main()
