"""Top-K metrics for reciprocal recommendation.

Per-side Recall/Precision/NDCG plus the overall-system metrics:

* coverage  -- CRecall, CPrecision: matched pairs hit by at least one side
* stability -- SRecall, SPrecision: matched pairs hit by both sides
* balanced ranking -- RNDCG: population-weighted NDCG of the two sides

Only *evaluable* users (at least one ground-truth match) enter averages and
the ``(n + m) K`` precision denominators.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

Pair = tuple[int, int]


@dataclass
class RecommendationRun:
    """Top-K lists for both sides.

    ``lists_a[a]`` is the ranked list of B-ids shown to A-user ``a``;
    ``lists_b[b]`` the ranked list of A-ids shown to B-user ``b``.
    ``scores_a``/``scores_b`` optionally carry the ranking scores.
    """
    k: int
    lists_a: dict[int, list[int]] = field(default_factory=dict)
    lists_b: dict[int, list[int]] = field(default_factory=dict)
    scores_a: dict[int, list[float]] | None = None
    scores_b: dict[int, list[float]] | None = None

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for side, lists in (("A", self.lists_a), ("B", self.lists_b)):
            for u, lst in lists.items():
                if len(lst) > self.k:
                    raise ValueError(f"side {side} user {u}: list longer than K={self.k}")
                if len(set(lst)) != len(lst):
                    raise ValueError(f"side {side} user {u}: duplicate entries")

    def lists(self, side: str) -> dict[int, list[int]]:
        return self.lists_a if side == "A" else self.lists_b

    def copy(self) -> "RecommendationRun":
        return RecommendationRun(
            self.k,
            {u: list(v) for u, v in self.lists_a.items()},
            {u: list(v) for u, v in self.lists_b.items()},
            None if self.scores_a is None else {u: list(v) for u, v in self.scores_a.items()},
            None if self.scores_b is None else {u: list(v) for u, v in self.scores_b.items()},
        )


class MatchSet:
    """Ground-truth matched pairs with per-user indexes."""

    def __init__(self, pairs: Iterable[Pair] = ()):
        self.pairs: frozenset[Pair] = frozenset((int(a), int(b)) for a, b in pairs)
        self.per_user_a: dict[int, set[int]] = {}
        self.per_user_b: dict[int, set[int]] = {}
        for a, b in self.pairs:
            self.per_user_a.setdefault(a, set()).add(b)
            self.per_user_b.setdefault(b, set()).add(a)

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair) -> bool:
        return pair in self.pairs

    def per_user(self, side: str) -> dict[int, set[int]]:
        return self.per_user_a if side == "A" else self.per_user_b


@dataclass
class SideMetrics:
    recall: float
    precision: float
    ndcg: float
    users: int


def _user_ndcg(hit_ranks: Sequence[int], n_rel: int, k: int) -> float:
    dcg = math.fsum(1.0 / math.log2(r + 1) for r in hit_ranks)
    idcg = math.fsum(1.0 / math.log2(r + 1) for r in range(1, min(n_rel, k) + 1))
    return dcg / idcg


def side_metrics(run: RecommendationRun, matches: MatchSet, side: str) -> SideMetrics:
    side = side.upper()
    truth = matches.per_user(side)
    lists = run.lists(side)
    recalls, precisions, ndcgs = [], [], []
    for u in sorted(truth):
        rel = truth[u]
        lst = lists.get(u, [])
        hit_ranks = [i for i, v in enumerate(lst, start=1) if v in rel]
        tp = len(hit_ranks)
        recalls.append(tp / len(rel))
        precisions.append(tp / run.k)
        ndcgs.append(_user_ndcg(hit_ranks, len(rel), run.k))
    if not recalls:
        return SideMetrics(0.0, 0.0, 0.0, 0)
    u = len(recalls)
    return SideMetrics(math.fsum(recalls) / u, math.fsum(precisions) / u, math.fsum(ndcgs) / u, u)


@dataclass
class HitCounts:
    tp_a: int
    tp_b: int
    tp_both: int
    n_users_a: int
    n_users_b: int
    m: int

    @property
    def covered(self) -> int:
        return self.tp_a + self.tp_b - self.tp_both


def hit_counts(run: RecommendationRun, matches: MatchSet) -> HitCounts:
    hit_a: set[Pair] = set()
    for a in matches.per_user_a:
        rel = matches.per_user_a[a]
        hit_a.update((a, b) for b in run.lists_a.get(a, ()) if b in rel)
    hit_b: set[Pair] = set()
    for b in matches.per_user_b:
        rel = matches.per_user_b[b]
        hit_b.update((a, b) for a in run.lists_b.get(b, ()) if a in rel)
    return HitCounts(len(hit_a), len(hit_b), len(hit_a & hit_b),
                     len(matches.per_user_a), len(matches.per_user_b), len(matches))


def mutual_hits(run: RecommendationRun, matches: MatchSet) -> set[Pair]:
    """Matched pairs that appear in both users' lists (redundant recommendations)."""
    return {
        (a, b) for a, b in matches.pairs
        if b in run.lists_a.get(a, ()) and a in run.lists_b.get(b, ())
    }


def _safe_div(num: float, den: float) -> float:
    return num / den if den else 0.0


def overall_coverage(run: RecommendationRun, matches: MatchSet) -> dict[str, float]:
    h = hit_counts(run, matches)
    return {
        "crecall": _safe_div(h.covered, h.m),
        "cprecision": _safe_div(h.covered, (h.n_users_a + h.n_users_b) * run.k),
    }


def bilateral_stability(run: RecommendationRun, matches: MatchSet) -> dict[str, float]:
    h = hit_counts(run, matches)
    return {
        "srecall": _safe_div(h.tp_both, h.m),
        "sprecision": _safe_div(h.tp_both, (h.n_users_a + h.n_users_b) * run.k),
    }


def weighted_ndcg(n: int, ndcg_a: float, m: int, ndcg_b: float) -> float:
    return _safe_div(n * ndcg_a + m * ndcg_b, n + m)


def rndcg(run: RecommendationRun, matches: MatchSet) -> float:
    sa = side_metrics(run, matches, "A")
    sb = side_metrics(run, matches, "B")
    return weighted_ndcg(sa.users, sa.ndcg, sb.users, sb.ndcg)


def true_positive_pairs(run: RecommendationRun, matches: MatchSet) -> int:
    return hit_counts(run, matches).covered


REPORT_COLUMNS = (
    "recall_a", "precision_a", "ndcg_a",
    "recall_b", "precision_b", "ndcg_b",
    "recall_avg", "precision_avg", "ndcg_avg",
    "crecall", "cprecision", "srecall", "sprecision", "rndcg",
    "true_positive_pairs", "num_users_a", "num_users_b", "num_matches",
)


@dataclass
class MetricReport:
    recall_a: float
    precision_a: float
    ndcg_a: float
    recall_b: float
    precision_b: float
    ndcg_b: float
    recall_avg: float
    precision_avg: float
    ndcg_avg: float
    crecall: float
    cprecision: float
    srecall: float
    sprecision: float
    rndcg: float
    true_positive_pairs: int
    num_users_a: int
    num_users_b: int
    num_matches: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["warnings"] = list(self.warnings)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_tsv(self) -> str:
        header = "\t".join(REPORT_COLUMNS)
        row = "\t".join(repr(getattr(self, c)) for c in REPORT_COLUMNS)
        return f"{header}\n{row}\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricReport":
        d = dict(d)
        d["warnings"] = tuple(d.get("warnings", ()))
        return cls(**d)


def evaluate_run(run: RecommendationRun, matches: MatchSet) -> MetricReport:
    sa = side_metrics(run, matches, "A")
    sb = side_metrics(run, matches, "B")
    h = hit_counts(run, matches)
    warnings = []
    if sa.users == 0:
        warnings.append("side A has no evaluable users")
    if sb.users == 0:
        warnings.append("side B has no evaluable users")
    if h.m == 0:
        warnings.append("no matched pairs: recall-type metrics set to 0")
    denom = (h.n_users_a + h.n_users_b) * run.k
    return MetricReport(
        recall_a=sa.recall, precision_a=sa.precision, ndcg_a=sa.ndcg,
        recall_b=sb.recall, precision_b=sb.precision, ndcg_b=sb.ndcg,
        recall_avg=(sa.recall + sb.recall) / 2,
        precision_avg=(sa.precision + sb.precision) / 2,
        ndcg_avg=(sa.ndcg + sb.ndcg) / 2,
        crecall=_safe_div(h.covered, h.m),
        cprecision=_safe_div(h.covered, denom),
        srecall=_safe_div(h.tp_both, h.m),
        sprecision=_safe_div(h.tp_both, denom),
        rndcg=weighted_ndcg(sa.users, sa.ndcg, sb.users, sb.ndcg),
        true_positive_pairs=h.covered,
        num_users_a=h.n_users_a, num_users_b=h.n_users_b, num_matches=h.m,
        warnings=tuple(warnings),
    )
