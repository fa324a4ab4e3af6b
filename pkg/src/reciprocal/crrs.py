"""Causal reciprocal ranking: one model per bilateral treatment.

Treatment codes name who receives the recommendation: ``"10"`` shows b to
a only, ``"01"`` shows a to b only, ``"11"`` both. Each treatment has its
own latent-factor model (``f10``, ``f11``, ``f01``) initialised from a
shared pretrained backbone; the no-recommendation outcome is fixed at 0.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import archive
from .backbone import (
    SIDE_A, SIDE_B, Adam, LatentFactorModel, NegativeSampler, TrainConfig,
    bpr_loss_and_grad, build_triples, model_from_arrays, validation_score,
)
from .dataset import InteractionLog, TreatmentSets
from .metrics import MatchSet

logger = logging.getLogger(__name__)

TREATMENTS = ("11", "10", "01")
CHECKPOINT_VERSION = 1

# strategy ids, also the IsMax tie-break order (earlier wins)
STRATEGY_10, STRATEGY_01, STRATEGY_11, STRATEGY_00 = 0, 1, 2, 3
STRATEGY_NAMES = ("10", "01", "11", "00")


@dataclass(eq=False)
class TreatmentModels:
    f10: LatentFactorModel
    f11: LatentFactorModel
    f01: LatentFactorModel
    pretrained: LatentFactorModel

    def __getitem__(self, t: str) -> LatentFactorModel:
        return {"10": self.f10, "11": self.f11, "01": self.f01}[t]

    def __setitem__(self, t: str, model: LatentFactorModel) -> None:
        setattr(self, f"f{t}", model)

    @property
    def n(self) -> int:
        return self.pretrained.n

    @property
    def m(self) -> int:
        return self.pretrained.m


def init_from_pretrained(backbone: LatentFactorModel) -> TreatmentModels:
    return TreatmentModels(backbone.copy(), backbone.copy(), backbone.copy(), backbone.copy())


@dataclass
class PotentialOutcomes:
    """Predicted matching probability under each treatment (scalars or arrays)."""
    y10: np.ndarray | float
    y11: np.ndarray | float
    y01: np.ndarray | float


def potential_outcomes(models: TreatmentModels, a, b) -> PotentialOutcomes:
    return PotentialOutcomes(models.f10.score(a, b), models.f11.score(a, b), models.f01.score(a, b))


def simple_scores(out: PotentialOutcomes, weights: tuple[float, float] = (1.0, 1.0)):
    """``s_a = y10 + y11`` and ``s_b = y01 + y11`` (optionally weighted)."""
    w_single, w_both = weights
    s_a = w_single * out.y10 + w_both * out.y11
    s_b = w_single * out.y01 + w_both * out.y11
    return s_a, s_b


def strategy_values(out: PotentialOutcomes, ybar_a, ybar_b) -> np.ndarray:
    """Total matching expectation of each strategy, stacked in tie-break order."""
    return np.stack(np.broadcast_arrays(
        out.y10 + ybar_b,   # show b to a; b's slot goes to an alternative
        out.y01 + ybar_a,   # show a to b; a's slot goes to an alternative
        out.y11,
        ybar_a + ybar_b,
    ))


def select_strategy(out: PotentialOutcomes, ybar_a, ybar_b) -> np.ndarray:
    # argmax returns the first maximum, which realises the tie-break order
    return np.argmax(strategy_values(out, ybar_a, ybar_b), axis=0)


def rerank_scores(out: PotentialOutcomes, ybar_a, ybar_b):
    """Vacant-slot reranking: keep only the score of the winning strategy."""
    win = select_strategy(out, ybar_a, ybar_b)
    y10, y11, y01 = np.broadcast_arrays(out.y10, out.y11, out.y01)
    s_a = np.where(win == STRATEGY_11, y11, np.where(win == STRATEGY_10, y10, 0.0))
    s_b = np.where(win == STRATEGY_11, y11, np.where(win == STRATEGY_01, y01, 0.0))
    if s_a.ndim == 0:
        return float(s_a), float(s_b)
    return s_a, s_b


@dataclass
class VacantSlotEstimate:
    user: int
    side: str
    ybar: float
    sample_size: int


class EstimationError(RuntimeError):
    pass


def vacant_slot_value(pretrained: LatentFactorModel, user: int, side: str, sample_size: int,
                      rng: np.random.Generator, exclusions=(), top_q: int = 1) -> VacantSlotEstimate:
    """Expected match value of the best alternative filling ``user``'s slot.

    Samples up to ``sample_size`` opposite-side users without replacement,
    scores them with the pretrained backbone and averages the top ``top_q``.
    """
    side = side.upper()
    size = pretrained.m if side == "A" else pretrained.n
    excluded = np.zeros(size, dtype=bool)
    ex = np.fromiter(exclusions, dtype=np.int64)
    excluded[ex[(ex >= 0) & (ex < size)]] = True
    cand = np.flatnonzero(~excluded)
    if len(cand) == 0:
        raise EstimationError(f"no candidates to fill the slot of user {user} on side {side}")
    take = min(sample_size, len(cand))
    picked = rng.choice(cand, size=take, replace=False)
    if side == "A":
        scores = pretrained.score(np.full(take, user), picked)
    else:
        scores = pretrained.score(picked, np.full(take, user))
    q = max(1, min(top_q, take))
    top = np.sort(scores)[::-1][:q]
    return VacantSlotEstimate(int(user), side, float(np.mean(top)), int(take))


class VacantSlotEstimator:
    """Per-evaluation cache of vacant-slot values.

    Each ``(side, user)`` draws from its own generator seeded by
    ``(seed, side, user)``, so values do not depend on query order.
    """

    def __init__(self, pretrained: LatentFactorModel, sample_size: int = 100, top_q: int = 1,
                 seed: int = 0, exclusions_a=None, exclusions_b=None):
        self.pretrained = pretrained
        self.sample_size = sample_size
        self.top_q = top_q
        self.seed = seed
        self.exclusions = {"A": exclusions_a or {}, "B": exclusions_b or {}}
        self._cache: dict[tuple[str, int], VacantSlotEstimate] = {}

    def estimate(self, user: int, side: str) -> VacantSlotEstimate:
        key = (side, int(user))
        if key not in self._cache:
            rng = np.random.default_rng([self.seed, 0 if side == "A" else 1, int(user)])
            self._cache[key] = vacant_slot_value(
                self.pretrained, user, side, self.sample_size, rng,
                self.exclusions[side].get(int(user), ()), self.top_q)
        return self._cache[key]

    def values(self, side: str, users=None) -> np.ndarray:
        if users is None:
            users = range(self.pretrained.n if side == "A" else self.pretrained.m)
        return np.array([self.estimate(u, side).ybar for u in users])


def simple_scorer(models: TreatmentModels, weights=(1.0, 1.0)):
    def score(side: str, users: np.ndarray) -> np.ndarray:
        out = PotentialOutcomes(models.f10.score_matrix(side, users),
                                models.f11.score_matrix(side, users),
                                models.f01.score_matrix(side, users))
        s_a, s_b = simple_scores(out, weights)
        return s_a if side == "A" else s_b
    return score


def rerank_scorer(models: TreatmentModels, estimator: VacantSlotEstimator):
    ybar_a = estimator.values("A")
    ybar_b = estimator.values("B")

    def score(side: str, users: np.ndarray) -> np.ndarray:
        out = PotentialOutcomes(models.f10.score_matrix(side, users),
                                models.f11.score_matrix(side, users),
                                models.f01.score_matrix(side, users))
        if side == "A":
            s_a, _ = rerank_scores(out, ybar_a[users][:, None], ybar_b[None, :])
            return s_a
        # rows are B-users, columns A-users
        _, s_b = rerank_scores(out, ybar_a[None, :], ybar_b[users][:, None])
        return s_b
    return score


def route_terms(pairs: np.ndarray, sets: TreatmentSets, neg_b: np.ndarray, neg_a: np.ndarray,
                ) -> dict[str, np.ndarray]:
    """Assign BPR triples of a batch to treatment losses.

    ``neg_b[i]`` replaces b (A-side negative) and ``neg_a[i]`` replaces a
    (B-side negative) for pair ``i``; ``-1`` marks a missing negative.
    d01 pairs feed L01 an A-side term, d10 pairs feed L10 a B-side term, and
    d11 pairs feed L11 both terms plus one term each to L01 and L10.
    """
    out: dict[str, list] = {t: [] for t in TREATMENTS}
    for (a, b), nb, na in zip(pairs.tolist(), neg_b.tolist(), neg_a.tolist()):
        pair = (a, b)
        a_term = (a, b, nb, SIDE_A) if nb >= 0 else None
        b_term = (a, b, na, SIDE_B) if na >= 0 else None
        if pair in sets.d01:
            out["01"].append(a_term)
        if pair in sets.d10:
            out["10"].append(b_term)
        if pair in sets.d11:
            out["11"].extend((a_term, b_term))
            out["01"].append(a_term)
            out["10"].append(b_term)
    return {t: np.array([x for x in v if x is not None], dtype=np.int64).reshape(-1, 4)
            for t, v in out.items()}


@dataclass
class FinetuneResult:
    models: TreatmentModels
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0


def counterfactual_finetune(models: TreatmentModels, sets: TreatmentSets, train_log: InteractionLog,
                            config: TrainConfig, validation_matches: MatchSet | None = None,
                            ) -> FinetuneResult:
    """Second training stage: treatment-specific BPR losses plus the pretraining loss.

    With ``validation_matches`` the best epoch under the simple aggregated
    score is kept (early stopping); otherwise all ``max_epochs`` run.
    """
    pairs = np.array(sorted(sets.all_pairs()), dtype=np.int64).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError("treatment sets are empty")
    for t in TREATMENTS:
        routed_any = {"11": sets.d11, "10": sets.d10 | sets.d11, "01": sets.d01 | sets.d11}[t]
        if not routed_any:
            logger.warning("no training pairs for treatment %s; it only receives the pretraining loss", t)

    train_pos = train_log.matched_pairs()
    sampler = NegativeSampler(models.n, models.m, train_pos | sets.all_pairs())
    work = TreatmentModels(models.f10.copy(), models.f11.copy(), models.f01.copy(), models.pretrained)
    params = {t: work[t].params() for t in TREATMENTS}
    opts = {t: Adam(params[t], config.learning_rate) for t in TREATMENTS}
    rng = np.random.default_rng(config.seed)

    def snapshot():
        return TreatmentModels(work.f10.copy(), work.f11.copy(), work.f01.copy(), work.pretrained)

    best, best_epoch, best_models, wait = -np.inf, 0, snapshot(), 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(pairs))
        sums = {t: 0.0 for t in TREATMENTS}
        batches = 0
        for s in range(0, len(order), config.batch_size):
            batch = pairs[order[s:s + config.batch_size]]
            neg_b = sampler.sample(batch[:, 0], SIDE_A, rng)
            neg_a = sampler.sample(batch[:, 1], SIDE_B, rng)
            routed = route_terms(batch, sets, neg_b, neg_a)
            pre_triples = build_triples(batch, sampler, rng)
            for t in TREATMENTS:
                model = work[t]
                loss, grads = bpr_loss_and_grad(model, pre_triples, config.l2_weight)
                if len(routed[t]):
                    lt, gt = bpr_loss_and_grad(model, routed[t], config.l2_weight)
                    loss += lt
                    for k in grads:
                        grads[k] += gt[k]
                opts[t].step(params[t], grads)
                sums[t] += loss
            batches += 1
        record = {"epoch": epoch, **{f"loss_{t}": sums[t] / batches for t in TREATMENTS}}
        if validation_matches is not None:
            metric = validation_score(simple_scorer(work), validation_matches, config.eval_k,
                                      train_pos, config.eval_metric)
            record["metric"] = metric
            if metric > best:
                best, best_epoch, best_models, wait = metric, epoch, snapshot(), 0
            else:
                wait += 1
        history.append(record)
        if validation_matches is not None and wait >= config.patience:
            break
    if validation_matches is None:
        best_models, best_epoch = snapshot(), len(history)
    return FinetuneResult(best_models, history, best_epoch)


def save_treatment_models(models: TreatmentModels, path: str | os.PathLike, meta: dict | None = None) -> None:
    arrays = {}
    for name, model in (("f10", models.f10), ("f11", models.f11), ("f01", models.f01),
                        ("pretrained", models.pretrained)):
        for k, v in model.params().items():
            arrays[f"{name}.{k}"] = v
    info = {"format": "reciprocal.treatment_models", "version": CHECKPOINT_VERSION,
            "n": models.n, "m": models.m, "d": models.pretrained.d}
    info.update(meta or {})
    archive.save_npz(path, arrays, info)


def load_treatment_models(path: str | os.PathLike) -> tuple[TreatmentModels, dict]:
    arrays, meta = archive.load_npz(path)
    if meta.get("format") != "reciprocal.treatment_models":
        raise ValueError(f"{path} is not a treatment-models checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    parts = {name: model_from_arrays(arrays, f"{name}.") for name in ("f10", "f11", "f01", "pretrained")}
    return TreatmentModels(**parts), meta
