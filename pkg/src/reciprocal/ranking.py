"""Full-ranking top-K selection shared by training validation and evaluation."""
from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

ScoreFn = Callable[[str, np.ndarray], np.ndarray]


def top_k(scores: np.ndarray, k: int, exclude: Sequence[Sequence[int]] | None = None,
          ) -> tuple[list[list[int]], list[list[float]]]:
    """Rank each row of ``scores`` descending, ties by ascending column id.

    Excluded columns are dropped, so a list may be shorter than ``k`` when
    fewer candidates remain.
    """
    s = np.array(scores, dtype=np.float64, copy=True)
    if exclude is not None:
        for i, ex in enumerate(exclude):
            if len(ex):
                s[i, np.asarray(ex, dtype=np.int64)] = -np.inf
    order = np.argsort(-s, axis=1, kind="stable")[:, :k]
    lists, vals = [], []
    for i in range(s.shape[0]):
        row = order[i]
        sc = s[i, row]
        keep = np.isfinite(sc)
        lists.append(row[keep].tolist())
        vals.append(sc[keep].tolist())
    return lists, vals


def rank_users(score_fn: ScoreFn, side: str, users: Sequence[int], k: int,
               exclusions: Mapping[int, set[int]] | None = None, chunk: int = 1024,
               ) -> tuple[dict[int, list[int]], dict[int, list[float]]]:
    """Build top-K lists for ``users`` on ``side`` from a batched score function."""
    users = list(users)
    lists: dict[int, list[int]] = {}
    scores: dict[int, list[float]] = {}
    for s in range(0, len(users), chunk):
        batch = users[s:s + chunk]
        mat = score_fn(side, np.asarray(batch, dtype=np.int64))
        ex = None
        if exclusions is not None:
            ex = [sorted(exclusions.get(u, ())) for u in batch]
        ls, vs = top_k(mat, k, ex)
        for u, l, v in zip(batch, ls, vs):
            lists[u] = l
            scores[u] = v
    return lists, scores
