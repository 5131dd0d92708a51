"""Four-arm comparison on the fairness oracle over several seeds; prints per-seed and median F1.

    python3 scripts/run_oracle_experiment.py --seeds 5 --epochs 1000
"""
import argparse
import time

import numpy as np

from mcrage.denoiser import TrainConfig
from mcrage.experiment import ARMS, ExperimentConfig, run_experiment
from mcrage.oracle import fairness_oracle


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=1000)
    ap.add_argument("--per-cell", type=int, default=500)
    args = ap.parse_args()
    scores = []
    for seed in range(args.seeds):
        t0 = time.time()
        cfg = ExperimentConfig(
            attribute="sex", minority_code=1, fraction=0.1,
            train=TrainConfig(epochs=args.epochs, checkpoint_every=max(args.epochs // 4, 1)), seed=seed,
        )
        res = run_experiment(fairness_oracle(args.per_cell, seed=seed), cfg)
        row = [res.reports[a].f1 for a in ARMS]
        scores.append(row)
        print(f"seed {seed}: " + "  ".join(f"{a} {v:.4f}" for a, v in zip(ARMS, row)) + f"  ({time.time() - t0:.0f}s)")
    med = np.median(scores, axis=0)
    print("median: " + "  ".join(f"{a} {v:.4f}" for a, v in zip(ARMS, med)))


if __name__ == "__main__":
    main()
