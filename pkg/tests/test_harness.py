import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reciprocal.backbone import TrainConfig, init_model, train
from reciprocal.dataset import DatasetSplit, InteractionLog, generate_synthetic, k_core_filter, split
from reciprocal.harness import (
    EvalConfig, adjust_rep, adjust_uni, evaluation_targets, full_rank_evaluate, read_run_dump,
    redundancy_rank_histogram, run_baseline_dual, write_run_dump,
)
from reciprocal.metrics import (
    REPORT_COLUMNS, MatchSet, RecommendationRun, evaluate_run, mutual_hits, side_metrics,
)

from helpers import brute_force_report, random_instance, to_run


def split_with_test(n, m, pairs):
    empty = InteractionLog.empty(n, m)
    return DatasetSplit(empty, empty, empty, set(pairs))


def oracle_scorer(pairs):
    def score(side, users):
        n = 1 + max([a for a, _ in pairs] + [0])
        m = 1 + max([b for _, b in pairs] + [0])
        dense = np.zeros((n, m))
        for a, b in pairs:
            dense[a, b] = 1.0
        return dense[users] if side == "A" else dense.T[users]
    return score


def test_oracle_scorer_is_perfect():
    pairs = {(0, 1), (0, 2), (1, 0), (2, 2), (3, 1)}
    run, report = full_rank_evaluate(oracle_scorer(pairs), split_with_test(4, 3, pairs),
                                     EvalConfig(k=2, candidate_policy="all"))
    assert report.recall_avg == 1.0 and report.crecall == 1.0 and report.srecall == 1.0


def test_constant_scorer_lists_lowest_ids():
    pairs = {(0, 4), (2, 1)}
    const = lambda side, users: np.zeros((len(users), 6 if side == "A" else 3))  # noqa: E731
    run, _ = full_rank_evaluate(const, split_with_test(3, 6, pairs), EvalConfig(k=3, candidate_policy="all"))
    assert run.lists_a == {0: [0, 1, 2], 2: [0, 1, 2]}
    assert run.lists_b == {1: [0, 1, 2], 4: [0, 1, 2]}


def test_exclusion_policy_drops_known_pairs():
    train_log = InteractionLog.from_records(3, 3, [(0, 0, 1, 1), (0, 0, 0, 1)])
    test_log = InteractionLog.from_records(3, 3, [(0, 0, 1, 1), (0, 0, 0, 1), (1, 2, 1, 1), (1, 2, 0, 1)])
    sp = DatasetSplit(train_log, InteractionLog.empty(3, 3), test_log, test_log.matched_pairs())
    matches, known = evaluation_targets(sp, "exclude-train-val-positives")
    assert matches.pairs == {(1, 2)} and known == {(0, 0)}
    assert evaluation_targets(sp, "all")[0].pairs == {(0, 0), (1, 2)}
    const = lambda side, users: np.zeros((len(users), 3))  # noqa: E731
    sp2 = DatasetSplit(train_log, InteractionLog.empty(3, 3), test_log, {(0, 1), (0, 0)})
    run, _ = full_rank_evaluate(const, sp2, EvalConfig(k=3))
    assert run.lists_a[0] == [1, 2]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_report_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, m, k, _, _, pairs = random_instance(rng)
    if not pairs:
        return
    table = rng.normal(size=(n, m))
    table_b = rng.normal(size=(m, n))
    score = lambda side, users: (table if side == "A" else table_b)[users]  # noqa: E731
    run, report = full_rank_evaluate(score, split_with_test(n, m, pairs), EvalConfig(k=k, candidate_policy="all"))
    ref = brute_force_report(n, m, k, run.lists_a, run.lists_b, pairs)
    for name, value in ref.items():
        assert getattr(report, name) == value, name
    again, _ = full_rank_evaluate(score, split_with_test(n, m, pairs), EvalConfig(k=k, candidate_policy="all"))
    assert again.lists_a == run.lists_a and again.lists_b == run.lists_b


def side_tuple(run, matches):
    return tuple(side_metrics(run, matches, s) for s in ("A", "B"))


def test_uni_fixed_point_without_mutual_hits():
    run = to_run(1, {0: [0], 1: [1]}, {0: [1], 1: [0]})
    matches = MatchSet({(0, 0), (0, 1), (1, 0), (1, 1)})
    out, rep = adjust_uni(run, matches, np.random.default_rng(0))
    assert out.lists_a == run.lists_a and out.lists_b == run.lists_b and rep.adjusted == 0


def test_rep_fixed_point_when_all_hits_mutual():
    run = to_run(1, {0: [0], 1: [1]}, {0: [0], 1: [1]})
    matches = MatchSet({(0, 0), (0, 1), (1, 0), (1, 1)})
    out, rep = adjust_rep(run, matches, np.random.default_rng(0))
    assert out.lists_a == run.lists_a and out.lists_b == run.lists_b and rep.adjusted == 0


def test_uni_turns_redundant_into_covering():
    # both sides hit each other's diagonal; off-diagonal matches are uncovered
    matches = MatchSet({(0, 0), (0, 1), (1, 0), (1, 1)})
    run = to_run(1, {0: [0], 1: [1]}, {0: [0], 1: [1]})
    before = evaluate_run(run, matches)
    out, rep = adjust_uni(run, matches, np.random.default_rng(0))
    after = evaluate_run(out, matches)
    assert rep.adjusted == 2
    assert side_tuple(out, matches) == side_tuple(run, matches)
    assert (before.crecall, after.crecall) == (0.5, 1.0)
    assert (before.srecall, after.srecall) == (0.5, 0.0)


def test_uni_rewrites_later_ranked_occurrence():
    matches = MatchSet({(0, 0), (0, 1)})
    run = to_run(2, {0: [5, 0]}, {0: [0, 7], 1: [3, 4]})
    out, _ = adjust_uni(run, matches, np.random.default_rng(0))
    assert out.lists_a[0] == [5, 1] and out.lists_b[0] == [0, 7]


def test_adjusters_skip_and_report_when_no_substitute():
    matches = MatchSet({(0, 0)})
    run = to_run(1, {0: [0]}, {0: [0]})
    out, rep = adjust_uni(run, matches, np.random.default_rng(0))
    assert rep.skipped == 1 and rep.skipped_pairs == [(0, 0)]
    assert out.lists_a == run.lists_a


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_adjuster_invariants(seed):
    rng = np.random.default_rng(seed)
    _, _, k, la, lb, pairs = random_instance(rng, max_users=8, max_k=4, match_rate=0.4)
    matches = MatchSet(pairs)
    run = to_run(k, la, lb)
    base = evaluate_run(run, matches)
    uni, _ = adjust_uni(run, matches, np.random.default_rng(seed))
    rep, _ = adjust_rep(run, matches, np.random.default_rng(seed))
    for adj in (uni, rep):
        assert side_tuple(adj, matches) == side_tuple(run, matches)
    r_uni, r_rep = evaluate_run(uni, matches), evaluate_run(rep, matches)
    assert r_rep.crecall <= base.crecall <= r_uni.crecall
    assert r_uni.srecall <= base.srecall <= r_rep.srecall
    assert run.lists_a == la and run.lists_b == lb  # inputs untouched


def test_histogram_examples():
    matches = MatchSet({(0, 0), (1, 1)})
    run = to_run(3, {0: [0, 5, 6], 1: [9]}, {0: [2, 3, 0], 1: [4]})
    assert redundancy_rank_histogram(run, matches).counts.tolist() == [1, 0, 1]
    none = to_run(3, {0: [5]}, {0: [4]})
    assert redundancy_rank_histogram(none, matches).counts.tolist() == [0, 0, 0]
    assert json.loads(redundancy_rank_histogram(run, matches).to_json()) == [1, 0, 1]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_histogram_sum_identity(seed):
    _, _, k, la, lb, pairs = random_instance(np.random.default_rng(seed))
    matches = MatchSet(pairs)
    run = to_run(k, la, lb)
    counts = redundancy_rank_histogram(run, matches).counts
    assert counts.min() >= 0
    assert counts.sum() == 2 * len(mutual_hits(run, matches))


def test_run_dump_round_trip(tmp_path):
    run = RecommendationRun(2, {0: [3, 1], 4: [2]}, {1: [0]},
                            {0: [0.9, 0.1 + 0.2], 4: [1e-300]}, {1: [0.5]})
    assert write_run_dump(run, tmp_path) == ["run_a.tsv", "run_b.tsv"]
    again = read_run_dump(tmp_path, 2)
    assert again.lists_a == run.lists_a and again.lists_b == run.lists_b
    assert again.scores_a == run.scores_a and again.scores_b == run.scores_b
    assert (tmp_path / "run_b.tsv").read_text() == "1\t1\t0\t0.5\n"


def all_mutual_split():
    """Every pair carries both directions, so each side sees the same positives."""
    rng = np.random.default_rng(3)
    pairs = [(a, b) for a in range(12) for b in range(12) if rng.random() < 0.3]
    part = rng.permutation(len(pairs))
    logs = []
    for chunk in np.array_split(part, [int(0.6 * len(pairs)), int(0.8 * len(pairs))]):
        recs = [r for i in chunk for r in ((*pairs[i], 1, 1), (*pairs[i], 0, 1))]
        logs.append(InteractionLog.from_records(12, 12, recs))
    return DatasetSplit(*logs, logs[2].matched_pairs())


def test_dual_degenerates_to_single_backbone():
    sp = all_mutual_split()
    cfg = TrainConfig(learning_rate=0.01, batch_size=16, max_epochs=15, patience=5, seed=2, eval_k=5)
    ecfg = EvalConfig(k=5)
    dual = run_baseline_dual(sp, cfg, ecfg, dim=4, seed=5, one_sided=False)
    assert dual.model_a.equals(dual.model_b)
    val = MatchSet(sp.validation.matched_pairs() - sp.train.matched_pairs())
    single = train(init_model(sp.n, sp.m, 4, seed=5), sp.train, val, cfg)
    _, report = full_rank_evaluate(single.model.score_matrix, sp, ecfg)
    assert dual.report == report


def test_dual_smoke_on_benchmark():
    log = generate_synthetic(200, 200, 8, 0.2, seed=7, sharpness=12)
    sp = split(k_core_filter(log, 5).log, (0.8, 0.1, 0.1), seed=7)
    cfg = TrainConfig(learning_rate=0.01, batch_size=256, max_epochs=5, patience=5, seed=1, eval_k=10)
    dual = run_baseline_dual(sp, cfg, EvalConfig(k=10), dim=8, seed=1)
    assert len(dual.history_a) == len(dual.history_b) == 5
    for c in REPORT_COLUMNS[:14]:
        assert 0.0 <= getattr(dual.report, c) <= 1.0
    assert not dual.model_a.equals(dual.model_b)


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(k=0)
    with pytest.raises(ValueError):
        EvalConfig(candidate_policy="some")
