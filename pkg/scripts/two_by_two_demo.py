"""Three top-1 runs over the same four matches that traditional recall cannot tell apart.

Every run has average Recall 0.5; coverage and stability separate them.
"""
from reciprocal.metrics import MatchSet, RecommendationRun, evaluate_run

MATCHES = MatchSet({(0, 0), (0, 1), (1, 0), (1, 1)})
RUNS = {
    "disjoint hits": RecommendationRun(1, {0: [0], 1: [1]}, {0: [1], 1: [0]}),
    "mirrored hits": RecommendationRun(1, {0: [0], 1: [1]}, {0: [0], 1: [1]}),
    "one overlap": RecommendationRun(1, {0: [0], 1: [1]}, {0: [0], 1: [0]}),
}


def main() -> None:
    print(f"{'run':<14} {'recall':>7} {'crecall':>8} {'srecall':>8} {'tp pairs':>9}")
    for name, run in RUNS.items():
        r = evaluate_run(run, MATCHES)
        print(f"{name:<14} {r.recall_avg:7.3f} {r.crecall:8.3f} {r.srecall:8.3f} {r.true_positive_pairs:9d}")


if __name__ == "__main__":
    main()
