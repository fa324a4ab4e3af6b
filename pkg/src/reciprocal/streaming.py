"""Incremental coverage/stability metrics, updated one user list at a time.

Two tracks are kept side by side. The exact track stores the positive-pair
set ``p`` together with the covered and mutual subsets and is authoritative.
The mirror track advances four scalars with the closed-form recurrences,
which need only ``|p|``, the step index and three per-user counts.

The recurrences subtract a single overlap count ``rm = |matches & p|`` from
both the hit count and the positive count. That is only exact when every
matched pair already in ``p`` is hit by the previous side and by this list,
so the mirrors drift from the exact values on general instances.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

Pair = tuple[int, int]


def recurrence_update(prev: tuple[float, float, float, float], p_size: int, t: int, k: int,
                      tp: int, m: int, rm: int) -> tuple[float, float, float, float]:
    """One step of the (crecall, cprecision, srecall, sprecision) recurrences.

    ``p_size`` and ``t`` are the values *before* this user is absorbed.
    """
    crecall, cprecision, srecall, sprecision = prev
    if rm > m:
        raise ValueError("rm cannot exceed m")
    rec_den = p_size + m - rm
    prec_den = (t + 1) * k
    if rec_den == 0 or prec_den == 0:
        raise ZeroDivisionError("recurrence denominator is zero")
    return (
        (crecall * p_size + tp - rm) / rec_den,
        (cprecision * t * k + tp - rm) / prec_den,
        (srecall * p_size + rm) / rec_den,
        (sprecision * t * k + rm) / prec_den,
    )


@dataclass
class StreamingMetricsState:
    k: int
    p: set[Pair] = field(default_factory=set)
    covered: set[Pair] = field(default_factory=set)
    mutual: set[Pair] = field(default_factory=set)
    t: int = 0
    mirror: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    processed: set[tuple[str, int]] = field(default_factory=set)
    # which side(s) hit each covered pair
    _hit_by: dict[Pair, set[str]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def process_user(self, user: int, side: str, lst: Iterable[int],
                     user_matches: Iterable[int]) -> "StreamingMetricsState":
        side = side.upper()
        if side not in ("A", "B"):
            raise ValueError(f"side must be 'A' or 'B', got {side!r}")
        key = (side, int(user))
        if key in self.processed:
            raise ValueError(f"user {user} on side {side} was already processed")
        lst = list(lst)
        if len(lst) > self.k:
            raise ValueError(f"list for user {user} exceeds K={self.k}")

        def pair(v: int) -> Pair:
            return (user, v) if side == "A" else (v, user)

        own = {pair(v) for v in user_matches}
        self.processed.add(key)
        if not own:
            # not an evaluable user: batch metrics ignore it, so the step is a no-op
            return self
        hits = {pair(v) for v in lst} & own
        rm = len(own & self.p)
        self.mirror = recurrence_update(self.mirror, len(self.p), self.t, self.k,
                                        len(hits), len(own), rm)
        self.p |= own
        for pr in hits:
            sides = self._hit_by.setdefault(pr, set())
            sides.add(side)
            self.covered.add(pr)
            if len(sides) == 2:
                self.mutual.add(pr)
        self.t += 1
        return self

    def _ratio(self, num: int, den: int) -> float:
        return num / den if den else 0.0

    @property
    def crecall(self) -> float:
        return self._ratio(len(self.covered), len(self.p))

    @property
    def cprecision(self) -> float:
        return self._ratio(len(self.covered), self.t * self.k)

    @property
    def srecall(self) -> float:
        return self._ratio(len(self.mutual), len(self.p))

    @property
    def sprecision(self) -> float:
        return self._ratio(len(self.mutual), self.t * self.k)

    def snapshot(self) -> dict[str, float]:
        mc, mp, ms, msp = self.mirror
        return {
            "t": self.t,
            "crecall": self.crecall, "cprecision": self.cprecision,
            "srecall": self.srecall, "sprecision": self.sprecision,
            "mirror_crecall": mc, "mirror_cprecision": mp,
            "mirror_srecall": ms, "mirror_sprecision": msp,
        }


def streaming_init(k: int) -> StreamingMetricsState:
    return StreamingMetricsState(k)


def streaming_process_user(state: StreamingMetricsState, user: int, side: str,
                           lst: Iterable[int], user_matches: Iterable[int]) -> StreamingMetricsState:
    return state.process_user(user, side, lst, user_matches)
