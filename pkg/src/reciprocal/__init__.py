"""Evaluation metrics, causal training and reranking for reciprocal recommendation."""
from .dataset import (
    DatasetSplit, InteractionLog, TreatmentSets, derive_treatment_sets, generate_synthetic,
    k_core_filter, load_interactions, split,
)
from .metrics import (
    MatchSet, MetricReport, RecommendationRun, bilateral_stability, evaluate_run,
    overall_coverage, rndcg, side_metrics, true_positive_pairs,
)
from .streaming import StreamingMetricsState, recurrence_update, streaming_init, streaming_process_user

__version__ = "0.1.0"
