"""Independent reference implementations and instance builders for tests.

The oracle walks every user of both sides and every list position, and
builds the coverage numerator as TP_A + TP_B - TP_{A&B}, rather than
reusing the package's set-union route.
"""
from __future__ import annotations

import math
import time
from contextlib import contextmanager

import numpy as np

from reciprocal.dataset import generate_synthetic, k_core_filter, split
from reciprocal.metrics import MatchSet, RecommendationRun


def brute_force_report(n: int, m: int, k: int, lists_a: dict, lists_b: dict, pairs: set) -> dict:
    def user_terms(users, opp_size, lists, is_a):
        recalls, precisions, ndcgs, tp_total = [], [], [], 0
        for u in range(users):
            rel = [v for v in range(opp_size) if ((u, v) if is_a else (v, u)) in pairs]
            if not rel:
                continue
            lst = lists.get(u, [])
            ranks = [i + 1 for i in range(len(lst)) if lst[i] in rel]
            tp = len(ranks)
            tp_total += tp
            recalls.append(tp / len(rel))
            precisions.append(tp / k)
            dcg = math.fsum(1.0 / math.log2(r + 1) for r in ranks)
            idcg = math.fsum(1.0 / math.log2(r + 1) for r in range(1, min(len(rel), k) + 1))
            ndcgs.append(dcg / idcg)
        cnt = len(recalls)

        def mean(xs):
            return math.fsum(xs) / cnt if cnt else 0.0
        return mean(recalls), mean(precisions), mean(ndcgs), tp_total, cnt

    ra, pa, na, tp_a, users_a = user_terms(n, m, lists_a, True)
    rb, pb, nb, tp_b, users_b = user_terms(m, n, lists_b, False)
    tp_ab = 0
    for a in range(n):
        for b in range(m):
            if (a, b) in pairs and b in lists_a.get(a, []) and a in lists_b.get(b, []):
                tp_ab += 1
    M = len(pairs)
    denom = (users_a + users_b) * k
    covered = tp_a + tp_b - tp_ab
    return {
        "recall_a": ra, "precision_a": pa, "ndcg_a": na,
        "recall_b": rb, "precision_b": pb, "ndcg_b": nb,
        "recall_avg": (ra + rb) / 2, "precision_avg": (pa + pb) / 2, "ndcg_avg": (na + nb) / 2,
        "crecall": covered / M if M else 0.0,
        "cprecision": covered / denom if denom else 0.0,
        "srecall": tp_ab / M if M else 0.0,
        "sprecision": tp_ab / denom if denom else 0.0,
        "rndcg": (users_a * na + users_b * nb) / (users_a + users_b) if users_a + users_b else 0.0,
        "true_positive_pairs": covered,
        "num_users_a": users_a, "num_users_b": users_b, "num_matches": M,
    }


def random_instance(rng: np.random.Generator, max_users: int = 10, max_k: int = 3,
                    match_rate: float | None = None):
    n = int(rng.integers(1, max_users + 1))
    m = int(rng.integers(1, max_users + 1))
    k = int(rng.integers(1, max_k + 1))
    rate = rng.uniform(0.05, 0.6) if match_rate is None else match_rate
    pairs = {(a, b) for a in range(n) for b in range(m) if rng.random() < rate}
    lists_a = {a: rng.permutation(m)[:int(rng.integers(0, min(k, m) + 1))].tolist() for a in range(n)}
    lists_b = {b: rng.permutation(n)[:int(rng.integers(0, min(k, n) + 1))].tolist() for b in range(m)}
    return n, m, k, lists_a, lists_b, pairs


def to_run(k, lists_a, lists_b) -> RecommendationRun:
    return RecommendationRun(k, {u: list(v) for u, v in lists_a.items()},
                             {u: list(v) for u, v in lists_b.items()})


def two_by_two_case(case: int):
    """Top-1 layout with users a1, a2, b1, b2 (ids 0, 1) and all four pairs matched.

    case 1: four one-sided hits forming a cycle a1->b1->a2->b2->a1
    case 2: two mutual pairs (a1, b1) and (a2, b2)
    case 3: one mutual pair plus two one-sided hits, three pairs covered
    """
    pairs = {(0, 0), (0, 1), (1, 0), (1, 1)}
    if case == 1:
        lists_a = {0: [0], 1: [1]}
        lists_b = {0: [1], 1: [0]}
    elif case == 2:
        lists_a = {0: [0], 1: [1]}
        lists_b = {0: [0], 1: [1]}
    elif case == 3:
        lists_a = {0: [0], 1: [1]}
        lists_b = {0: [0], 1: [0]}
    else:
        raise ValueError(case)
    return RecommendationRun(1, lists_a, lists_b), MatchSet(pairs)


def fixed_point_core(records, k):
    """Brute-force k-core: drop one under-degree user at a time until none remain."""
    recs = list(records)
    while True:
        deg_a, deg_b = {}, {}
        for a, b, *_ in recs:
            deg_a[a] = deg_a.get(a, 0) + 1
            deg_b[b] = deg_b.get(b, 0) + 1
        bad_a = sorted(u for u, d in deg_a.items() if d < k)
        bad_b = sorted(u for u, d in deg_b.items() if d < k)
        if bad_a:
            recs = [r for r in recs if r[0] != bad_a[0]]
        elif bad_b:
            recs = [r for r in recs if r[1] != bad_b[0]]
        else:
            return recs


def mutual_everywhere_instance(rng):
    """Every matched pair appears in both users' lists, plus unmatched filler."""
    n, m = int(rng.integers(2, 9)), int(rng.integers(2, 9))
    pairs = {(a, b) for a in range(n) for b in range(m) if rng.random() < 0.3}
    matches = MatchSet(pairs)
    deg = max([len(v) for v in matches.per_user_a.values()] +
              [len(v) for v in matches.per_user_b.values()] + [1])
    k = deg + int(rng.integers(0, 3))
    la, lb = {}, {}
    for a in range(n):
        own = sorted(matches.per_user_a.get(a, ()))
        rest = [b for b in rng.permutation(m).tolist() if b not in own]
        la[a] = (own + rest)[:k]
    for b in range(m):
        own = sorted(matches.per_user_b.get(b, ()))
        rest = [a for a in rng.permutation(n).tolist() if a not in own]
        lb[b] = (own + rest)[:k]
    return k, la, lb, matches


def benchmark_split():
    """The seeded synthetic benchmark: n = m = 200, 5-core, 8:1:1 split."""
    log = generate_synthetic(200, 200, 8, 0.2, seed=7, sharpness=12)
    return split(k_core_filter(log, 5).log, (0.8, 0.1, 0.1), seed=7)


ACCEPTANCE_LINES: list[str] = []


@contextmanager
def criterion(number: int, title: str, budget: float | None = None):
    """Time a criterion body and log one PASS/FAIL line; a blown budget fails it."""
    start = time.perf_counter()
    line = None
    try:
        yield
        elapsed = time.perf_counter() - start
        if budget is not None and elapsed >= budget:
            line = f"FAIL  {number}. {title} ({elapsed:.2f}s, budget {budget:g}s)"
            raise AssertionError(f"criterion {number} took {elapsed:.2f}s, budget {budget:g}s")
        line = f"PASS  {number}. {title} ({elapsed:.2f}s)"
    except BaseException as exc:
        if line is None:
            line = f"FAIL  {number}. {title}: {type(exc).__name__}: {exc}".splitlines()[0]
        raise
    finally:
        ACCEPTANCE_LINES.append(line)
        print(line)
