"""GBT vs cubic merit-order benchmark over several weekly splits.

Usage: python scripts/merit_order_gap.py [--splits 5] [--seed 0]
"""

import argparse
import json

import numpy as np

from priceshap import gbt, testbed
from priceshap.benchmark import fit_benchmark, predict_benchmark, residual_load
from priceshap.gbt import Hyperparams, r2_score
from priceshap.split import weekly_shuffle_split


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--splits", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0, help="testbed seed")
    args = ap.parse_args()

    frame = testbed.generate(testbed.SyntheticSpec(seed=args.seed))
    r = residual_load(frame)
    rows = []
    for s in range(args.splits):
        plan = weekly_shuffle_split(frame, s)
        test = plan.test_rows
        model = gbt.train(frame, plan, Hyperparams())
        bench = fit_benchmark(r[plan.train_rows], frame.y[plan.train_rows])
        g = r2_score(frame.y[test], model.predict(frame.X[test]))
        b = r2_score(frame.y[test], predict_benchmark(bench, r[test]))
        rows.append({"split_seed": s, "gbt_test_r2": g, "benchmark_test_r2": b, "n_trees": len(model.trees)})
        print(f"split {s}: gbt {g:.4f}  benchmark {b:.4f}  gap {g - b:+.4f}")
    gaps = np.array([x["gbt_test_r2"] - x["benchmark_test_r2"] for x in rows])
    print(json.dumps({"runs": rows, "mean_gap": float(gaps.mean()), "min_gap": float(gaps.min())}, indent=2))


if __name__ == "__main__":
    main()
