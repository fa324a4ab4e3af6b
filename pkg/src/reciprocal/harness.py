"""End-to-end evaluation: full ranking, redundancy adjusters, rank histogram,
and the dual-backbone baseline."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .backbone import SIDE_A, SIDE_B, LatentFactorModel, TrainConfig, init_model, train
from .dataset import DatasetSplit, derive_treatment_sets
from .metrics import MatchSet, MetricReport, RecommendationRun, evaluate_run, mutual_hits
from .ranking import ScoreFn, rank_users

CANDIDATE_POLICIES = ("all", "exclude-train-val-positives")


@dataclass
class EvalConfig:
    k: int = 50
    candidate_policy: str = "exclude-train-val-positives"
    ybar_sample_size: int = 100
    ybar_top_q: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.candidate_policy not in CANDIDATE_POLICIES:
            raise ValueError(f"candidate_policy must be one of {CANDIDATE_POLICIES}")


def evaluation_targets(split: DatasetSplit, policy: str) -> tuple[MatchSet, set]:
    """Test matches to evaluate against and the pairs removed from candidates.

    Under the exclusion policy a test pair already known as a train or
    validation positive is neither a candidate nor a target.
    """
    if policy == "all":
        return MatchSet(split.matched_pairs_test), set()
    known = split.train.matched_pairs() | split.validation.matched_pairs()
    return MatchSet(split.matched_pairs_test - known), known


def full_rank_evaluate(scorer: ScoreFn, split: DatasetSplit, config: EvalConfig,
                       ) -> tuple[RecommendationRun, MetricReport]:
    matches, known = evaluation_targets(split, config.candidate_policy)
    ex_a: dict[int, set[int]] = {}
    ex_b: dict[int, set[int]] = {}
    for a, b in known:
        ex_a.setdefault(a, set()).add(b)
        ex_b.setdefault(b, set()).add(a)
    run = RecommendationRun(config.k)
    run.lists_a, run.scores_a = rank_users(scorer, "A", sorted(matches.per_user_a), config.k, ex_a)
    run.lists_b, run.scores_b = rank_users(scorer, "B", sorted(matches.per_user_b), config.k, ex_b)
    return run, evaluate_run(run, matches)


@dataclass
class AdjustmentReport:
    adjusted: int = 0
    skipped: int = 0
    skipped_pairs: list = field(default_factory=list)


class _HitState:
    """Which matched pairs each side's lists currently hit."""

    def __init__(self, run: RecommendationRun, matches: MatchSet):
        self.by_a = {(a, b) for a, lst in run.lists_a.items() for b in lst if (a, b) in matches}
        self.by_b = {(a, b) for b, lst in run.lists_b.items() for a in lst if (a, b) in matches}


def _rank(lst: list[int], v: int) -> int:
    return lst.index(v) + 1


def adjust_uni(run: RecommendationRun, matches: MatchSet, rng: np.random.Generator,
               ) -> tuple[RecommendationRun, AdjustmentReport]:
    """Turn redundant (mutual) hits into hits on otherwise uncovered matches.

    For each mutually hit pair the later-ranked occurrence (side B on a tie)
    is overwritten, in place, by a random matched counterpart of that user
    that neither side currently hits.
    """
    out = run.copy()
    hs = _HitState(out, matches)
    rep = AdjustmentReport()
    for a, b in sorted(mutual_hits(run, matches)):
        la, lb = out.lists_a[a], out.lists_b[b]
        if _rank(la, b) > _rank(lb, a):
            user, lst, owner, truth = a, la, "A", matches.per_user_a[a]
            eligible = sorted(c for c in truth
                              if (a, c) not in hs.by_a and (a, c) not in hs.by_b and c not in lst)
        else:
            user, lst, owner, truth = b, lb, "B", matches.per_user_b[b]
            eligible = sorted(c for c in truth
                              if (c, b) not in hs.by_a and (c, b) not in hs.by_b and c not in lst)
        if not eligible:
            rep.skipped += 1
            rep.skipped_pairs.append((a, b))
            continue
        new = int(rng.choice(eligible))
        if owner == "A":
            lst[lst.index(b)] = new
            hs.by_a.discard((a, b))
            hs.by_a.add((a, new))
        else:
            lst[lst.index(a)] = new
            hs.by_b.discard((a, b))
            hs.by_b.add((new, b))
        rep.adjusted += 1
    return out, rep


def adjust_rep(run: RecommendationRun, matches: MatchSet, rng: np.random.Generator,
               ) -> tuple[RecommendationRun, AdjustmentReport]:
    """Turn one-sided hits into redundant ones.

    Each one-sided hit of user u is overwritten, in place, by a random
    matched counterpart c of u whose own list already contains u, making
    (u, c) mutually recommended.
    """
    out = run.copy()
    hs = _HitState(out, matches)
    rep = AdjustmentReport()
    for side in ("A", "B"):
        lists = out.lists_a if side == "A" else out.lists_b
        for u in sorted(lists):
            lst = lists[u]
            for pos in range(len(lst)):
                v = lst[pos]
                pair = (u, v) if side == "A" else (v, u)
                own, other = (hs.by_a, hs.by_b) if side == "A" else (hs.by_b, hs.by_a)
                if pair not in own or pair in other:
                    continue
                truth = matches.per_user(side)[u]
                eligible = []
                for c in sorted(truth):
                    cp = (u, c) if side == "A" else (c, u)
                    if cp in other and cp not in own and c not in lst:
                        eligible.append(c)
                if not eligible:
                    rep.skipped += 1
                    rep.skipped_pairs.append(pair)
                    continue
                new = int(rng.choice(eligible))
                lst[pos] = new
                own.discard(pair)
                own.add((u, new) if side == "A" else (new, u))
                rep.adjusted += 1
    return out, rep


@dataclass
class RankHistogram:
    counts: np.ndarray

    def to_json(self) -> str:
        return json.dumps([int(c) for c in self.counts]) + "\n"


def redundancy_rank_histogram(run: RecommendationRun, matches: MatchSet) -> RankHistogram:
    counts = np.zeros(run.k, dtype=np.int64)
    for a, b in mutual_hits(run, matches):
        counts[_rank(run.lists_a[a], b) - 1] += 1
        counts[_rank(run.lists_b[b], a) - 1] += 1
    return RankHistogram(counts)


def dual_scorer(model_a: LatentFactorModel, model_b: LatentFactorModel) -> ScoreFn:
    def score(side: str, users: np.ndarray) -> np.ndarray:
        return (model_a if side == "A" else model_b).score_matrix(side, users)
    return score


@dataclass
class DualResult:
    report: MetricReport
    run: RecommendationRun
    model_a: LatentFactorModel
    model_b: LatentFactorModel
    history_a: list
    history_b: list


def run_baseline_dual(split: DatasetSplit, train_config: TrainConfig, eval_config: EvalConfig,
                      dim: int, seed: int = 0, one_sided: bool = True) -> DualResult:
    """Two independent backbones, one per recommendation direction.

    The A-side model learns from matched pairs observed with an a->b
    interaction (d10 and d11) and ranks B-users for A-users; the B-side model
    mirrors it. With ``one_sided=False`` both models sample negatives on both
    sides, which makes them identical whenever their positive sets agree.
    """
    sets = derive_treatment_sets(split.train)
    pos_a = sets.d10 | sets.d11
    pos_b = sets.d01 | sets.d11
    val = MatchSet(split.validation.matched_pairs() - split.train.matched_pairs())
    results = []
    for side, pos, metric in ((SIDE_A, pos_a, "recall_a"), (SIDE_B, pos_b, "recall_b")):
        cfg = TrainConfig(**{**train_config.__dict__, "eval_metric": metric if one_sided else train_config.eval_metric})
        sides = (side,) if one_sided else (SIDE_A, SIDE_B)
        model = init_model(split.n, split.m, dim, seed)
        results.append(train(model, split.train, val, cfg, sides=sides, positives=pos))
    res_a, res_b = results
    run, report = full_rank_evaluate(dual_scorer(res_a.model, res_b.model), split, eval_config)
    return DualResult(report, run, res_a.model, res_b.model, res_a.history, res_b.history)


def write_run_dump(run: RecommendationRun, out_dir: str | os.PathLike, prefix: str = "run") -> list[str]:
    """Per-side TSV ``<user_id>\\t<rank>\\t<counterpart_id>\\t<score>``."""
    names = []
    for side, lists, scores in (("a", run.lists_a, run.scores_a), ("b", run.lists_b, run.scores_b)):
        name = f"{prefix}_{side}.tsv"
        with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="\n") as fh:
            for u in sorted(lists):
                sc = scores.get(u) if scores else None
                for i, v in enumerate(lists[u]):
                    s = repr(float(sc[i])) if sc is not None else "nan"
                    fh.write(f"{u}\t{i + 1}\t{v}\t{s}\n")
        names.append(name)
    return names


def read_run_dump(run_dir: str | os.PathLike, k: int, prefix: str = "run") -> RecommendationRun:
    run = RecommendationRun(k, scores_a={}, scores_b={})
    for side, lists, scores in (("a", run.lists_a, run.scores_a), ("b", run.lists_b, run.scores_b)):
        with open(os.path.join(run_dir, f"{prefix}_{side}.tsv"), encoding="utf-8") as fh:
            for line in fh:
                u, rank, v, s = line.rstrip("\n").split("\t")
                lst = lists.setdefault(int(u), [])
                if int(rank) != len(lst) + 1:
                    raise ValueError(f"run dump {prefix}_{side}.tsv: ranks out of order for user {u}")
                lst.append(int(v))
                scores.setdefault(int(u), []).append(float(s))
    return run
