"""Sweep the non-adaptive hardness instance over K and n.

Writes one CSV row per (K, n): analytic bound, recursion objective at
beta_u = 1/K, simulated NADAP ratio and the LP objective.

    python scripts/hardness_sweep.py --K 2,3,5,8 --n 50,100,200,400 --episodes 2000 --out hardness.csv
"""

from __future__ import annotations

import argparse
import csv
import sys

from omrr.cli import HARDNESS_COLUMNS, hardness_rows


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--K", default="2,3,5,8")
    ap.add_argument("--n", default="50,100,200,400")
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()

    Ks = [int(k) for k in args.K.split(",")]
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(HARDNESS_COLUMNS)
    for n in (int(x) for x in args.n.split(",")):
        for row in hardness_rows([K for K in Ks if K <= n], n, args.episodes, args.seed):
            w.writerow(["" if x is None else x for x in row])
            fh.flush()
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()
