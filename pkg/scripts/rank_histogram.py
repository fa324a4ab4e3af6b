"""Rank positions of redundant (mutually recommended) matches in an evaluated run.

Reads the run dump written by ``reciprocal evaluate`` and prints a text bar chart.
"""
import argparse
import os

from reciprocal.dataset import read_split
from reciprocal.harness import evaluation_targets, read_run_dump, redundancy_rank_histogram


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("run_dir", help="directory given as --out to the CLI")
    ap.add_argument("--mode", default="backbone")
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--policy", default="exclude-train-val-positives")
    args = ap.parse_args()

    sp, _ = read_split(args.run_dir)
    run = read_run_dump(os.path.join(args.run_dir, "reports", args.mode), args.k)
    matches, _ = evaluation_targets(sp, args.policy)
    counts = redundancy_rank_histogram(run, matches).counts
    top = max(int(counts.max()), 1)
    for rank, c in enumerate(counts, start=1):
        print(f"{rank:>4} {int(c):>6} {'#' * round(40 * c / top)}")


if __name__ == "__main__":
    main()
