"""Latent-factor backbone trained with the BPR pairwise loss and Adam.

A triple is ``(a, b, neg, side)``. With ``side == SIDE_A`` the negative is a
B-user replacing ``b`` (ranking B-users for ``a``); with ``side == SIDE_B``
the negative is an A-user replacing ``a``.
"""
from __future__ import annotations

import copy
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from . import archive
from .dataset import InteractionLog
from .metrics import MatchSet, RecommendationRun, side_metrics
from .ranking import rank_users

logger = logging.getLogger(__name__)

SIDE_A = 0
SIDE_B = 1
CHECKPOINT_VERSION = 1


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


@dataclass(eq=False)
class LatentFactorModel:
    emb_a: np.ndarray
    emb_b: np.ndarray
    bias_a: np.ndarray | None = None
    bias_b: np.ndarray | None = None

    def __post_init__(self):
        if self.emb_a.ndim != 2 or self.emb_b.ndim != 2 or self.emb_a.shape[1] != self.emb_b.shape[1]:
            raise ValueError("embedding matrices must be n x d and m x d")
        if self.emb_a.shape[1] < 1:
            raise ValueError("d must be >= 1")
        if (self.bias_a is None) != (self.bias_b is None):
            raise ValueError("biases must be both present or both absent")

    @property
    def n(self) -> int:
        return self.emb_a.shape[0]

    @property
    def m(self) -> int:
        return self.emb_b.shape[0]

    @property
    def d(self) -> int:
        return self.emb_a.shape[1]

    @property
    def use_bias(self) -> bool:
        return self.bias_a is not None

    def params(self) -> dict[str, np.ndarray]:
        p = {"emb_a": self.emb_a, "emb_b": self.emb_b}
        if self.use_bias:
            p["bias_a"] = self.bias_a
            p["bias_b"] = self.bias_b
        return p

    def copy(self) -> "LatentFactorModel":
        return copy.deepcopy(self)

    def equals(self, other: "LatentFactorModel") -> bool:
        mine, theirs = self.params(), other.params()
        return mine.keys() == theirs.keys() and all(
            np.array_equal(mine[k], theirs[k]) for k in mine)

    def logits(self, a, b) -> np.ndarray:
        a = np.asarray(a)
        b = np.asarray(b)
        x = np.einsum("...d,...d->...", self.emb_a[a], self.emb_b[b])
        if self.use_bias:
            x = x + self.bias_a[a] + self.bias_b[b]
        return x

    def score(self, a, b):
        """Matching score in (0, 1)."""
        return sigmoid(self.logits(a, b))

    def score_matrix(self, side: str, users: np.ndarray) -> np.ndarray:
        """Scores of every opposite-side candidate for each of ``users``."""
        if side == "A":
            x = self.emb_a[users] @ self.emb_b.T
            if self.use_bias:
                x += self.bias_a[users][:, None] + self.bias_b[None, :]
        else:
            x = self.emb_b[users] @ self.emb_a.T
            if self.use_bias:
                x += self.bias_b[users][:, None] + self.bias_a[None, :]
        return sigmoid(x)


def init_model(n: int, m: int, d: int, seed: int = 0, use_bias: bool = False) -> LatentFactorModel:
    if min(n, m, d) < 1:
        raise ValueError("n, m, d must be >= 1")
    rng = np.random.default_rng(seed)
    scale = 0.1 / np.sqrt(d)
    emb_a = rng.normal(0.0, scale, size=(n, d))
    emb_b = rng.normal(0.0, scale, size=(m, d))
    if use_bias:
        return LatentFactorModel(emb_a, emb_b, np.zeros(n), np.zeros(m))
    return LatentFactorModel(emb_a, emb_b)


def bpr_loss_and_grad(model: LatentFactorModel, triples, l2_weight: float = 0.0,
                      ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean BPR loss ``-log sigmoid(x_pos - x_neg)`` over triples, plus L2.

    The L2 term is ``l2_weight`` times the mean (over triples) squared norm of
    the three embedding rows each triple touches. Gradients are dense arrays
    keyed like :meth:`LatentFactorModel.params`.
    """
    t = np.asarray(triples, dtype=np.int64).reshape(-1, 4)
    if len(t) == 0:
        raise ValueError("no triples")
    a, b, neg, side = t.T
    on_a = side == SIDE_A
    # the A-user and B-user of the negative pair
    neg_a = np.where(on_a, a, neg)
    neg_b = np.where(on_a, neg, b)
    if np.any((on_a & (neg == b)) | (~on_a & (neg == a))):
        raise ValueError("negative equals positive in a triple")

    ea, eb = model.emb_a[a], model.emb_b[b]
    ena, enb = model.emb_a[neg_a], model.emb_b[neg_b]
    diff = np.einsum("id,id->i", ea, eb) - np.einsum("id,id->i", ena, enb)
    if model.use_bias:
        diff = diff + model.bias_a[a] + model.bias_b[b] - model.bias_a[neg_a] - model.bias_b[neg_b]
    T = len(t)
    loss = float(np.mean(np.logaddexp(0.0, -diff)))
    # d loss / d diff, already divided by T
    c = (sigmoid(diff) - 1.0) / T

    g_a = np.zeros_like(model.emb_a)
    g_b = np.zeros_like(model.emb_b)
    np.add.at(g_a, a, c[:, None] * eb)
    np.add.at(g_b, b, c[:, None] * ea)
    np.add.at(g_a, neg_a, -c[:, None] * enb)
    np.add.at(g_b, neg_b, -c[:, None] * ena)

    neg_rows = np.where(on_a[:, None], enb, ena)
    if l2_weight:
        sq = (ea ** 2).sum(1) + (eb ** 2).sum(1) + (neg_rows ** 2).sum(1)
        loss += l2_weight * float(np.mean(sq))
        w = 2.0 * l2_weight / T
        np.add.at(g_a, a, w * ea)
        np.add.at(g_b, b, w * eb)
        g_neg_a = np.zeros_like(model.emb_a)
        g_neg_b = np.zeros_like(model.emb_b)
        np.add.at(g_neg_a, neg[~on_a], w * ena[~on_a])
        np.add.at(g_neg_b, neg[on_a], w * enb[on_a])
        g_a += g_neg_a
        g_b += g_neg_b

    grads = {"emb_a": g_a, "emb_b": g_b}
    if model.use_bias:
        gba = np.zeros_like(model.bias_a)
        gbb = np.zeros_like(model.bias_b)
        np.add.at(gba, a, c)
        np.add.at(gbb, b, c)
        np.add.at(gba, neg_a, -c)
        np.add.at(gbb, neg_b, -c)
        grads["bias_a"] = gba
        grads["bias_b"] = gbb
    return loss, grads


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.state = OptimizerState(lr, beta1, beta2, eps)
        for k, p in params.items():
            self.state.m[k] = np.zeros_like(p)
            self.state.v[k] = np.zeros_like(p)

    def step(self, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        s = self.state
        s.step += 1
        bc1 = 1.0 - s.beta1 ** s.step
        bc2 = 1.0 - s.beta2 ** s.step
        for k, g in grads.items():
            m, v = s.m[k], s.v[k]
            m *= s.beta1
            m += (1.0 - s.beta1) * g
            v *= s.beta2
            v += (1.0 - s.beta2) * g * g
            params[k] -= s.lr * (m / bc1) / (np.sqrt(v / bc2) + s.eps)

    def metadata(self) -> dict:
        s = self.state
        return {"name": "adam", "lr": s.lr, "beta1": s.beta1, "beta2": s.beta2,
                "eps": s.eps, "step": s.step}


class SamplingError(RuntimeError):
    pass


def sample_negative(user: int, side: str, exclusions: Iterable[int], rng: np.random.Generator,
                    num_candidates: int) -> int:
    """Uniform draw over opposite-side ids ``0..num_candidates-1`` not in ``exclusions``."""
    excl = set(exclusions)
    if len(excl & set(range(num_candidates))) >= num_candidates:
        raise SamplingError(f"no negative candidate for user {user} on side {side}")
    while True:
        c = int(rng.integers(num_candidates))
        if c not in excl:
            return c


class NegativeSampler:
    """Vectorised rejection sampler over known-positive exclusion lists."""

    def __init__(self, n: int, m: int, positives: Iterable[tuple[int, int]]):
        self.n, self.m = n, m
        pos = np.array(sorted(set(positives)), dtype=np.int64).reshape(-1, 2)
        self._codes = np.unique(pos[:, 0] * m + pos[:, 1])
        self.deg_a = np.bincount(pos[:, 0], minlength=n)
        self.deg_b = np.bincount(pos[:, 1], minlength=m)

    def _is_pos(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        codes = a * self.m + b
        idx = np.searchsorted(self._codes, codes)
        idx = np.minimum(idx, max(len(self._codes) - 1, 0))
        return (self._codes[idx] == codes) if len(self._codes) else np.zeros(len(codes), bool)

    def sample(self, users: np.ndarray, side: int, rng: np.random.Generator) -> np.ndarray:
        """One negative per user; ``-1`` where every candidate is excluded."""
        users = np.asarray(users, dtype=np.int64)
        if side == SIDE_A:
            size, full = self.m, self.deg_a[users] >= self.m
        else:
            size, full = self.n, self.deg_b[users] >= self.n
        out = rng.integers(size, size=len(users))
        out[full] = -1
        todo = ~full
        while True:
            check = np.flatnonzero(todo)
            if len(check) == 0:
                return out
            if side == SIDE_A:
                bad = self._is_pos(users[check], out[check])
            else:
                bad = self._is_pos(out[check], users[check])
            todo[check[~bad]] = False
            redo = check[bad]
            out[redo] = rng.integers(size, size=len(redo))


def build_triples(pairs: np.ndarray, sampler: NegativeSampler, rng: np.random.Generator,
                  sides: tuple[int, ...] = (SIDE_A, SIDE_B)) -> np.ndarray:
    """BPR triples for positive ``pairs`` (k x 2), one negative per pair per side."""
    out = []
    for side in sides:
        users = pairs[:, 0] if side == SIDE_A else pairs[:, 1]
        neg = sampler.sample(users, side, rng)
        ok = neg >= 0
        out.append(np.column_stack([pairs[ok, 0], pairs[ok, 1], neg[ok],
                                    np.full(ok.sum(), side, dtype=np.int64)]))
    return np.concatenate(out) if out else np.zeros((0, 4), dtype=np.int64)


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 30
    seed: int = 0
    l2_weight: float = 1e-6
    eval_metric: str = "recall_avg"
    eval_k: int = 50
    negatives_per_positive: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.negatives_per_positive < 1:
            raise ValueError("negatives_per_positive must be >= 1")


def exclusion_index(pairs: Iterable[tuple[int, int]]) -> tuple[dict[int, set[int]], dict[int, set[int]]]:
    ex_a: dict[int, set[int]] = {}
    ex_b: dict[int, set[int]] = {}
    for a, b in pairs:
        ex_a.setdefault(a, set()).add(b)
        ex_b.setdefault(b, set()).add(a)
    return ex_a, ex_b


def validation_score(score_fn, matches: MatchSet, k: int, exclude_pairs: Iterable[tuple[int, int]],
                     metric: str = "recall_avg") -> float:
    """Full-ranking Recall@K (or NDCG@K) of ``score_fn`` against ``matches``."""
    ex_a, ex_b = exclusion_index(exclude_pairs)
    sides = {"recall_a": "A", "recall_b": "B", "ndcg_a": "A", "ndcg_b": "B"}.get(metric)
    run = RecommendationRun(k)
    if sides in (None, "A"):
        run.lists_a, _ = rank_users(score_fn, "A", sorted(matches.per_user_a), k, ex_a)
    if sides in (None, "B"):
        run.lists_b, _ = rank_users(score_fn, "B", sorted(matches.per_user_b), k, ex_b)
    name = metric.rsplit("_", 1)[0]
    if sides is not None:
        return getattr(side_metrics(run, matches, sides), name)
    ma, mb = side_metrics(run, matches, "A"), side_metrics(run, matches, "B")
    return (getattr(ma, name) + getattr(mb, name)) / 2


@dataclass
class TrainResult:
    model: LatentFactorModel
    history: list[dict]
    best_epoch: int
    optimizer: dict


def train(model: LatentFactorModel, train_log: InteractionLog, validation_matches: MatchSet,
          config: TrainConfig, sides: tuple[int, ...] = (SIDE_A, SIDE_B),
          positives: Iterable[tuple[int, int]] | None = None,
          validator: Callable[[LatentFactorModel], float] | None = None) -> TrainResult:
    """Early-stopped BPR training; returns the best-epoch snapshot.

    ``positives`` defaults to the matched pairs of ``train_log``. ``sides``
    picks which negative-sampling sides build triples. ``validator`` replaces
    the default validation metric.
    """
    train_pos = train_log.matched_pairs()
    pos_pairs = sorted(train_pos if positives is None else set(positives))
    if not pos_pairs:
        raise ValueError("training log has no positive pairs")
    pairs = np.array(pos_pairs, dtype=np.int64)
    sampler = NegativeSampler(model.n, model.m, train_pos | set(pos_pairs))
    if validator is None:
        def validator(mdl):
            return validation_score(mdl.score_matrix, validation_matches, config.eval_k,
                                    train_pos, config.eval_metric)

    model = model.copy()
    params = model.params()
    opt = Adam(params, config.learning_rate)
    rng = np.random.default_rng(config.seed)
    best, best_epoch, best_model, wait = -np.inf, 0, model.copy(), 0
    history = []
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(pairs))
        total, count = 0.0, 0
        for s in range(0, len(order), config.batch_size):
            batch = pairs[order[s:s + config.batch_size]]
            batch = np.repeat(batch, config.negatives_per_positive, axis=0)
            triples = build_triples(batch, sampler, rng, sides)
            if len(triples) == 0:
                continue
            loss, grads = bpr_loss_and_grad(model, triples, config.l2_weight)
            opt.step(params, grads)
            total += loss * len(triples)
            count += len(triples)
        metric = float(validator(model))
        history.append({"epoch": epoch, "loss": total / max(count, 1), "metric": metric})
        logger.debug("epoch %d loss %.5f %s %.5f", epoch, history[-1]["loss"], config.eval_metric, metric)
        if metric > best:
            best, best_epoch, best_model, wait = metric, epoch, model.copy(), 0
        else:
            wait += 1
            if wait >= config.patience:
                break
    return TrainResult(best_model, history, best_epoch, opt.metadata())


def save_model(model: LatentFactorModel, path: str | os.PathLike, meta: dict | None = None) -> None:
    info = {"format": "reciprocal.latent_factor", "version": CHECKPOINT_VERSION,
            "n": model.n, "m": model.m, "d": model.d, "use_bias": model.use_bias}
    info.update(meta or {})
    archive.save_npz(path, model.params(), info)


def model_from_arrays(arrays: Mapping[str, np.ndarray], prefix: str = "") -> LatentFactorModel:
    return LatentFactorModel(arrays[prefix + "emb_a"], arrays[prefix + "emb_b"],
                             arrays.get(prefix + "bias_a"), arrays.get(prefix + "bias_b"))


def load_model(path: str | os.PathLike) -> tuple[LatentFactorModel, dict]:
    arrays, meta = archive.load_npz(path)
    if meta.get("format") != "reciprocal.latent_factor":
        raise ValueError(f"{path} is not a latent-factor checkpoint")
    if meta.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
    return model_from_arrays(arrays), meta
