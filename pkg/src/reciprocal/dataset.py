"""Bipartite directed-interaction data: loading, k-core pruning, splitting,
synthetic generation and treatment-set derivation.

Side A users are indexed ``0..n-1`` and side B users ``0..m-1``. Every
interaction record is ``(a, b, direction, match)`` where ``direction == 1``
means ``a -> b`` and ``direction == 0`` means ``b -> a``.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np


class DataFormatError(ValueError):
    """A malformed line in an interaction file."""


class ValidationError(ValueError):
    """Data that parses but violates an invariant."""


class ConfigError(ValueError):
    """Invalid parameters passed to a data operation."""


class Interaction(NamedTuple):
    a: int
    b: int
    direction: int
    match: int


Pair = tuple[int, int]


@dataclass(eq=False)
class InteractionLog:
    n: int
    m: int
    a: np.ndarray
    b: np.ndarray
    direction: np.ndarray
    match: np.ndarray

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.int64)
        self.b = np.asarray(self.b, dtype=np.int64)
        self.direction = np.asarray(self.direction, dtype=np.int8)
        self.match = np.asarray(self.match, dtype=np.int8)
        k = len(self.a)
        if not (len(self.b) == len(self.direction) == len(self.match) == k):
            raise ValidationError("interaction columns differ in length")
        if k:
            if self.n < 1 or self.m < 1:
                raise ValidationError("non-empty log needs n >= 1 and m >= 1")
            if self.a.min() < 0 or self.a.max() >= self.n:
                raise ValidationError("side-A id out of range")
            if self.b.min() < 0 or self.b.max() >= self.m:
                raise ValidationError("side-B id out of range")
            if not np.isin(self.direction, (0, 1)).all():
                raise ValidationError("direction must be 0 or 1")
            if not np.isin(self.match, (0, 1)).all():
                raise ValidationError("match must be 0 or 1")

    @classmethod
    def from_records(cls, n: int, m: int, records) -> "InteractionLog":
        arr = np.asarray(list(records), dtype=np.int64).reshape(-1, 4)
        return cls(n, m, arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def empty(cls, n: int = 0, m: int = 0) -> "InteractionLog":
        z = np.zeros(0, dtype=np.int64)
        return cls(n, m, z, z, z, z)

    def __len__(self) -> int:
        return len(self.a)

    def __iter__(self) -> Iterator[Interaction]:
        for row in zip(self.a.tolist(), self.b.tolist(),
                       self.direction.tolist(), self.match.tolist()):
            yield Interaction(*row)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionLog):
            return NotImplemented
        return (self.n == other.n and self.m == other.m
                and np.array_equal(self.a, other.a)
                and np.array_equal(self.b, other.b)
                and np.array_equal(self.direction, other.direction)
                and np.array_equal(self.match, other.match))

    def take(self, idx: np.ndarray) -> "InteractionLog":
        return InteractionLog(self.n, self.m, self.a[idx], self.b[idx],
                              self.direction[idx], self.match[idx])

    def matched_pairs(self) -> set[Pair]:
        sel = self.match == 1
        return set(zip(self.a[sel].tolist(), self.b[sel].tolist()))

    def check_consistent(self) -> None:
        """Raise if one (a, b) pair carries two different match labels."""
        seen: dict[Pair, int] = {}
        for i, (a, b, _, r) in enumerate(self):
            prev = seen.setdefault((a, b), r)
            if prev != r:
                raise ValidationError(
                    f"conflicting match labels for pair ({a}, {b}) at record {i + 1}")


def load_interactions(path: str | os.PathLike, format: str = "tsv") -> InteractionLog:
    if format != "tsv":
        raise ConfigError(f"unsupported format {format!r}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            # tabs are the documented separator; any whitespace is tolerated on read
            parts = line.split("\t") if "\t" in line else line.split()
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}")
            try:
                a, b, d, r = (int(p) for p in parts)
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field") from None
            if a < 0 or b < 0:
                raise DataFormatError(f"{path}:{lineno}: negative id")
            if d not in (0, 1) or r not in (0, 1):
                raise DataFormatError(f"{path}:{lineno}: direction and match must be 0/1")
            records.append((a, b, d, r))
    if not records:
        return InteractionLog.empty()
    n = 1 + max(r[0] for r in records)
    m = 1 + max(r[1] for r in records)
    log = InteractionLog.from_records(n, m, records)
    log.check_consistent()
    return log


def save_interactions(log: InteractionLog, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, d, r in log:
            fh.write(f"{a}\t{b}\t{d}\t{r}\n")


@dataclass
class CoreResult:
    """Output of :func:`k_core_filter`.

    ``a_ids[new] == old`` maps dense re-indexed ids back to input ids.
    """
    log: InteractionLog
    a_ids: np.ndarray
    b_ids: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.log) == 0


def k_core_filter(log: InteractionLog, k: int) -> CoreResult:
    if k < 1:
        raise ConfigError("k must be >= 1")
    keep = np.ones(len(log), dtype=bool)
    while True:
        deg_a = np.bincount(log.a[keep], minlength=log.n)
        deg_b = np.bincount(log.b[keep], minlength=log.m)
        drop = keep & ((deg_a[log.a] < k) | (deg_b[log.b] < k))
        if not drop.any():
            break
        keep &= ~drop
    sub = log.take(np.flatnonzero(keep))
    a_ids = np.unique(sub.a)
    b_ids = np.unique(sub.b)
    if len(sub) == 0:
        return CoreResult(InteractionLog.empty(), a_ids, b_ids)
    new_a = np.searchsorted(a_ids, sub.a)
    new_b = np.searchsorted(b_ids, sub.b)
    out = InteractionLog(len(a_ids), len(b_ids), new_a, new_b, sub.direction, sub.match)
    return CoreResult(out, a_ids, b_ids)


@dataclass
class DatasetSplit:
    train: InteractionLog
    validation: InteractionLog
    test: InteractionLog
    matched_pairs_test: set[Pair] = field(default_factory=set)

    @property
    def n(self) -> int:
        return self.train.n

    @property
    def m(self) -> int:
        return self.train.m


def split(log: InteractionLog, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetSplit:
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three positive fractions summing to 1, got {ratios}")
    total = len(log)
    n_train = int(round(ratios[0] * total))
    n_val = min(int(round(ratios[1] * total)), total - n_train)
    perm = np.random.default_rng(seed).permutation(total)
    train = log.take(np.sort(perm[:n_train]))
    val = log.take(np.sort(perm[n_train:n_train + n_val]))
    test = log.take(np.sort(perm[n_train + n_val:]))
    return DatasetSplit(train, val, test, test.matched_pairs())


@dataclass
class TreatmentSets:
    d11: set[Pair]
    d10: set[Pair]
    d01: set[Pair]

    def all_pairs(self) -> set[Pair]:
        return self.d11 | self.d10 | self.d01


def derive_treatment_sets(train: InteractionLog) -> TreatmentSets:
    # direction is the treatment proxy: a-initiated means b was shown to a
    seen_ab: set[Pair] = set()
    seen_ba: set[Pair] = set()
    for a, b, d, r in train:
        if r != 1:
            continue
        (seen_ab if d == 1 else seen_ba).add((a, b))
    return TreatmentSets(d11=seen_ab & seen_ba, d10=seen_ab - seen_ba, d01=seen_ba - seen_ab)


def generate_synthetic(n: int, m: int, dim: int = 8, density: float = 0.05,
                       seed: int = 0, sharpness: float = 4.0) -> InteractionLog:
    """Sample a log from a latent-attraction model.

    Each user gets one zero-mean Gaussian latent vector. A directed
    interaction is emitted independently in each direction with probability
    ``sigmoid(sharpness * <u_a, u_b> + offset)``, where ``offset`` is solved
    so the mean rate equals ``density``. A pair is matched iff both
    directions were emitted.
    """
    if n < 10 or m < 10:
        raise ConfigError("synthetic generation needs n, m >= 10")
    if not 0.0 < density < 1.0:
        raise ConfigError("density must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    ua = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(n, dim))
    ub = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(m, dim))
    logit = sharpness * (ua @ ub.T)
    offset = _solve_offset(logit, density)
    prob = 0.5 * (1.0 + np.tanh(0.5 * (logit + offset)))
    fwd = rng.random((n, m)) < prob
    bwd = rng.random((n, m)) < prob
    matched = fwd & bwd
    records = []
    for a, b in zip(*np.nonzero(fwd | bwd)):
        r = int(matched[a, b])
        if fwd[a, b]:
            records.append((a, b, 1, r))
        if bwd[a, b]:
            records.append((a, b, 0, r))
    if not records:
        return InteractionLog(n, m, *(np.zeros(0, dtype=np.int64),) * 4)
    return InteractionLog.from_records(n, m, records)


def _solve_offset(logit: np.ndarray, target: float) -> float:
    def rate(off):
        return float(np.mean(0.5 * (1.0 + np.tanh(0.5 * (logit + off)))))
    lo, hi = -50.0 - logit.max(), 50.0 - logit.min()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if rate(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def write_split(split_: DatasetSplit, out_dir: str | os.PathLike, meta: dict) -> list[str]:
    """Write train/validation/test TSVs plus ``metadata.json``; return file names."""
    os.makedirs(out_dir, exist_ok=True)
    names = []
    for name, part in (("train", split_.train), ("validation", split_.validation),
                       ("test", split_.test)):
        fname = f"{name}.tsv"
        save_interactions(part, os.path.join(out_dir, fname))
        names.append(fname)
    meta = {"n": split_.n, "m": split_.m, **meta}
    with open(os.path.join(out_dir, "metadata.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    names.append("metadata.json")
    return names


def read_split(run_dir: str | os.PathLike) -> tuple[DatasetSplit, dict]:
    meta_path = os.path.join(run_dir, "metadata.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"no prepared split in {run_dir} (missing metadata.json)")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    n, m = meta["n"], meta["m"]
    parts = []
    for name in ("train", "validation", "test"):
        path = os.path.join(run_dir, f"{name}.tsv")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing split manifest {path}")
        raw = load_interactions(path)
        parts.append(InteractionLog(n, m, raw.a, raw.b, raw.direction, raw.match))
    train, val, test = parts
    return DatasetSplit(train, val, test, test.matched_pairs()), meta
