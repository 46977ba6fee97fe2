"""Dependency-slope consistency study on synthetic data.

Trains the top-k models of a random search on each of several weekly splits
and summarizes the fitted slopes of load, wind and solar (renewables
sign-flipped). Defaults are small; pass --splits 10 --top-k 10 --trials 50
for the full-size study.
"""

import argparse
import json

from priceshap import testbed
from priceshap.search import SearchSpace, consistency_study


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--splits", type=int, default=2)
    ap.add_argument("--top-k", type=int, default=3)
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--threads", type=int, default=4)
    ap.add_argument("--out", help="write slopes CSV here")
    args = ap.parse_args()

    frame = testbed.generate(testbed.SyntheticSpec())
    space = SearchSpace.default()
    study, searches = consistency_study(frame, space, args.splits, args.top_k, args.trials,
                                        ["load", "wind", "solar"], threads=args.threads)
    for res in searches:
        best = res.best
        print(f"split {res.split_seed}: best trial {best.index} test R2 {best.test_r2:.4f}")
    print(json.dumps(study.summary(), indent=2, sort_keys=True))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(study.to_csv())


if __name__ == "__main__":
    main()
