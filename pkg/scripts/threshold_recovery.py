"""Recover a planted oil-price step from SHAP dependency data.

Sweeps the step location and reports the threshold found by the scan.
"""

import argparse

from priceshap import gbt, testbed
from priceshap.explain import dependency, threshold_scan, tree_shap
from priceshap.gbt import Hyperparams
from priceshap.split import weekly_shuffle_split


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--thresholds", type=float, nargs="+", default=[62.0, 66.0, 69.0, 72.0])
    ap.add_argument("--step", type=float, default=10.0)
    args = ap.parse_args()
    for theta in args.thresholds:
        spec = testbed.SyntheticSpec(step=args.step, oil_threshold=theta, noise_sigma=0.1 * args.step,
                                     target_benchmark_r2=None)
        frame = testbed.generate(spec)
        plan = weekly_shuffle_split(frame, 0)
        model = gbt.train(frame, plan, Hyperparams())
        rows = plan.test_rows
        res = threshold_scan(dependency(tree_shap(model, frame.X[rows], threads=4), "oil"))
        print(f"planted {theta:6.2f}  found {res.threshold:6.2f}  gap {res.gap:+.2f}  z {res.z_score:.1f}")


if __name__ == "__main__":
    main()
