"""Print per-(estimator, n, metric) medians of a metrics CSV written by ``fair run``."""

import argparse
import csv

import numpy as np


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("csv")
    p.add_argument("--metric", help="only show this metric")
    args = p.parse_args()
    groups = {}
    with open(args.csv) as fh:
        for row in csv.DictReader(fh):
            if args.metric and row["metric"] != args.metric:
                continue
            key = (row["metric"], int(row["n"]), row["estimator"])
            groups.setdefault(key, []).append(float(row["value"]))
    print(f"{'metric':<20} {'n':>6} {'estimator':<16} {'median':>12} {'count':>6}")
    for (metric, n, name), vals in sorted(groups.items()):
        finite = [v for v in vals if np.isfinite(v)]
        med = np.median(finite) if finite else float("nan")
        print(f"{metric:<20} {n:>6} {name:<16} {med:>12.4g} {len(finite):>6}")


if __name__ == "__main__":
    main()
