"""Localization error versus maximum traced reflection order on the occluded scene."""

import argparse
import csv
import sys

from reflectloc.experiments import order_ablation


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--orders", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--scenario", default="occluded")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args()

    table = order_ablation(args.orders, range(args.seeds), args.scenario, args.workers)
    rows = [(k, s.mean_error, s.std_error, s.convergence_rate) for k, s in table.items()]
    w = csv.writer(open(args.csv, "w", newline="") if args.csv else sys.stdout, lineterminator="\n")
    w.writerow(["order", "mean_error_m", "std_error_m", "convergence_rate"])
    for k, m, s, c in rows:
        w.writerow([k, f"{m:.4f}", f"{s:.4f}", f"{c:.2f}"])
    if args.csv:
        for k, m, s, c in rows:
            print(f"order {k}: {m:.3f} +- {s:.3f} m, convergence {c:.2f}")


if __name__ == "__main__":
    main()
