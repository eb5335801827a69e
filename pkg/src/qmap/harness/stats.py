"""Wilcoxon rank-sum test with an exact small-sample branch."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb, erfc, sqrt

import numpy as np
from scipy.stats import rankdata

EXACT_MAX_TOTAL = 20


@dataclass(frozen=True)
class RankSumResult:
    """Two-sided p-value and the rank sum ``statistic`` of the first sample.

    ``exact`` is False when the normal approximation was used;
    ``tie_fallback`` marks an exact-sized problem that had to fall back
    because of ties.
    """

    p: float
    statistic: float
    exact: bool
    tie_fallback: bool = False


@lru_cache(maxsize=None)
def rank_sum_counts(n: int, total: int) -> tuple[int, ...]:
    """Number of ``n``-subsets of ``{1..total}`` with each possible sum.

    Index ``s`` holds the count for sum ``s``; the counts add up to
    ``C(total, n)``.
    """
    max_sum = sum(range(total - n + 1, total + 1))
    # ways[k][s]: k-subsets of the ranks seen so far summing to s
    ways = np.zeros((n + 1, max_sum + 1), dtype=object)
    ways[0, 0] = 1
    for r in range(1, total + 1):
        for k in range(min(r, n), 0, -1):
            ways[k, r:] = ways[k, r:] + ways[k - 1, :max_sum + 1 - r]
    return tuple(int(v) for v in ways[n])


def exact_rank_sum_p(w: int, n: int, m: int) -> float:
    """Two-sided exact p: twice the smaller tail at rank sum ``w``, capped at 1."""
    counts = rank_sum_counts(n, n + m)
    total = comb(n + m, n)
    lower = sum(counts[:w + 1])
    upper = sum(counts[w:])
    return min(1.0, 2 * min(lower, upper) / total)


def _normal_p(w: float, n: int, m: int, ranks: np.ndarray) -> float:
    big = n + m
    mean = n * (big + 1) / 2
    _, tie_counts = np.unique(ranks, return_counts=True)
    tie_term = np.sum(tie_counts**3 - tie_counts) / (big * (big - 1)) if big > 1 else 0.0
    var = n * m / 12 * ((big + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(w - mean) - 0.5, 0.0) / sqrt(var)
    return float(min(1.0, erfc(z / sqrt(2))))


def wilcoxon_rank_sum(a, b) -> RankSumResult:
    """Two-sided Wilcoxon rank-sum test of samples ``a`` and ``b``.

    Exact enumeration of the rank-sum distribution when ``len(a) + len(b)
    <= 20`` and there are no ties; otherwise the normal approximation with
    midranks, tie-corrected variance and continuity correction.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("both samples must be nonempty")
    n, m = a.size, b.size
    ranks = rankdata(np.concatenate([a, b]))
    w = float(ranks[:n].sum())
    ties = len(np.unique(ranks)) < n + m
    if n + m <= EXACT_MAX_TOTAL and not ties:
        return RankSumResult(exact_rank_sum_p(int(w), n, m), w, True)
    return RankSumResult(_normal_p(w, n, m, ranks), w, False, tie_fallback=ties and n + m <= EXACT_MAX_TOTAL)
