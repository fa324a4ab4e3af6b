import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reciprocal.metrics import (
    REPORT_COLUMNS, MatchSet, MetricReport, RecommendationRun, bilateral_stability,
    evaluate_run, overall_coverage, rndcg, side_metrics, true_positive_pairs, weighted_ndcg,
)

from helpers import brute_force_report, random_instance, to_run, two_by_two_case


@pytest.mark.parametrize("case", [1, 2, 3])
def test_two_by_two_recall_is_blind(case):
    run, matches = two_by_two_case(case)
    ra = side_metrics(run, matches, "A").recall
    rb = side_metrics(run, matches, "B").recall
    assert (ra + rb) / 2 == 0.5


@pytest.mark.parametrize("case, crecall, srecall, tp", [
    (1, 1.0, 0.0, 4),
    (2, 0.5, 0.5, 2),
    (3, 0.75, 0.25, 3),
])
def test_two_by_two_coverage_and_stability(case, crecall, srecall, tp):
    run, matches = two_by_two_case(case)
    assert overall_coverage(run, matches)["crecall"] == crecall
    assert bilateral_stability(run, matches)["srecall"] == srecall
    assert true_positive_pairs(run, matches) == tp


def test_perfect_top1_user():
    run = RecommendationRun(3, {0: [4, 1, 2]}, {})
    sm = side_metrics(run, MatchSet({(0, 4)}), "A")
    assert sm.recall == 1.0
    assert sm.ndcg == 1.0
    assert sm.precision == pytest.approx(1 / 3)


def test_ndcg_discount_and_ideal_truncation():
    # matches {1, 2, 3}, K=2, hit only at rank 2 -> DCG = 1/log2(3), IDCG over 2 slots
    run = RecommendationRun(2, {0: [9, 1]}, {})
    sm = side_metrics(run, MatchSet({(0, 1), (0, 2), (0, 3)}), "A")
    expected = (1 / math.log2(3)) / (1 + 1 / math.log2(3))
    assert sm.ndcg == pytest.approx(expected, rel=1e-15)


def test_users_without_matches_are_not_averaged():
    run = RecommendationRun(1, {0: [0], 1: [5]}, {})
    sm = side_metrics(run, MatchSet({(0, 0)}), "A")
    assert sm.recall == 1.0 and sm.users == 1


def test_empty_side_flags_and_zeroes():
    run = RecommendationRun(2)
    report = evaluate_run(run, MatchSet())
    assert report.crecall == 0 and report.srecall == 0 and report.rndcg == 0
    assert report.warnings


def test_empty_lists_give_zero_coverage():
    matches = MatchSet({(0, 0), (1, 2)})
    run = RecommendationRun(5, {0: [], 1: []}, {0: [], 2: []})
    assert overall_coverage(run, matches) == {"crecall": 0.0, "cprecision": 0.0}
    assert true_positive_pairs(run, matches) == 0


def test_rndcg_closed_form():
    assert weighted_ndcg(3, 0.4, 1, 0.8) == pytest.approx(0.5)
    assert weighted_ndcg(2, 0.3, 2, 0.7) == pytest.approx(0.5)


def test_run_rejects_long_or_duplicate_lists():
    with pytest.raises(ValueError):
        RecommendationRun(1, {0: [1, 2]})
    with pytest.raises(ValueError):
        RecommendationRun(3, {0: [1, 1]})


@pytest.mark.parametrize("seed", range(25))
def test_matches_brute_force_on_random_8x8(seed):
    rng = np.random.default_rng(seed)
    n = m = 8
    k = 3
    pairs = {(a, b) for a in range(n) for b in range(m) if rng.random() < 0.3}
    lists_a = {a: rng.permutation(m)[:k].tolist() for a in range(n)}
    lists_b = {b: rng.permutation(n)[:k].tolist() for b in range(m)}
    report = evaluate_run(to_run(k, lists_a, lists_b), MatchSet(pairs))
    ref = brute_force_report(n, m, k, lists_a, lists_b, pairs)
    for name, value in ref.items():
        assert getattr(report, name) == value, name


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_report_invariants(seed):
    n, m, k, la, lb, pairs = random_instance(np.random.default_rng(seed))
    matches = MatchSet(pairs)
    r = evaluate_run(to_run(k, la, lb), matches)
    for c in REPORT_COLUMNS[:14]:
        assert 0.0 <= getattr(r, c) <= 1.0
    assert r.srecall <= r.crecall
    assert r.sprecision <= r.cprecision
    assert r.true_positive_pairs <= len(matches)
    if len(matches):
        assert abs(r.true_positive_pairs - r.crecall * len(matches)) <= 1e-12
    if r.num_users_a == r.num_users_b:
        assert r.rndcg == pytest.approx(r.ndcg_avg, abs=1e-15)
    assert r.rndcg == rndcg(to_run(k, la, lb), matches)


def test_report_serialisation_round_trip():
    run, matches = two_by_two_case(3)
    report = evaluate_run(run, matches)
    header, row = report.to_tsv().splitlines()
    assert tuple(header.split("\t")) == REPORT_COLUMNS
    assert len(row.split("\t")) == len(REPORT_COLUMNS)
    import json
    again = MetricReport.from_dict(json.loads(report.to_json()))
    assert again == report
