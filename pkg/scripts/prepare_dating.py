"""Convert the public Libimseti dating ratings dump into an interaction log.

The dump has ``user,profile,rating`` lines (ratings 1-10) and no gender
column. Users are split by a gender file (``user,F|M|U``); A is the male
side and B the female side. A rating of at least ``--threshold`` counts as
a directed interaction, and a pair that rated each other at or above the
threshold in both directions is a match. The output is the four-column TSV
read by ``reciprocal prepare --data``.
"""
import argparse
import csv
from collections import defaultdict

from reciprocal.dataset import InteractionLog, save_interactions


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("ratings")
    ap.add_argument("gender")
    ap.add_argument("out")
    ap.add_argument("--threshold", type=int, default=8)
    args = ap.parse_args()

    with open(args.gender, newline="") as fh:
        gender = {int(r[0]): r[1].strip().upper() for r in csv.reader(fh) if r}
    liked = defaultdict(set)  # (a, b) -> directions present
    with open(args.ratings, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            src, dst, rating = int(row[0]), int(row[1]), int(row[2])
            if rating < args.threshold:
                continue
            g_src, g_dst = gender.get(src), gender.get(dst)
            if (g_src, g_dst) == ("M", "F"):
                liked[(src, dst)].add(1)
            elif (g_src, g_dst) == ("F", "M"):
                liked[(dst, src)].add(0)

    a_ids = {u: i for i, u in enumerate(sorted({a for a, _ in liked}))}
    b_ids = {u: i for i, u in enumerate(sorted({b for _, b in liked}))}
    records = []
    for (a, b), dirs in sorted(liked.items()):
        match = int(dirs == {0, 1})
        records += [(a_ids[a], b_ids[b], d, match) for d in sorted(dirs)]
    log = InteractionLog.from_records(len(a_ids), len(b_ids), records)
    save_interactions(log, args.out)
    print(f"{len(a_ids)} A-users, {len(b_ids)} B-users, {len(log)} interactions, "
          f"{len(log.matched_pairs())} matches -> {args.out}")


if __name__ == "__main__":
    main()
