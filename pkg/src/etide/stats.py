"""Nonparametric comparison of optimiser results.

Errors below 1e-8 count as zero; pairs of algorithms are compared per
function with a two-sided Wilcoxon rank-sum test; families of comparisons
against a reference algorithm go through Holm's step-down procedure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

ERROR_FLOOR = 1e-8
EXACT_MAX = 8


def floor_error(e: float) -> float:
    if e < 0:
        raise ValueError(f"error must be non-negative, got {e!r}")
    return 0.0 if e < ERROR_FLOOR else e


@dataclass(frozen=True)
class SampleSummary:
    mean: float
    stddev: float
    n: int


def summarize(sample: Sequence[float]) -> SampleSummary:
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    std = float(np.std(x, ddof=1)) if x.size > 1 else 0.0
    return SampleSummary(float(np.mean(x)), std, int(x.size))


class Mark(str, Enum):
    BETTER = "+"
    EQUAL = "="
    WORSE = "-"


@dataclass(frozen=True)
class ComparisonMark:
    mark: Mark
    p_value: float


def _subset_sum_counts(weights: Sequence[int], k: int) -> list[int]:
    """counts[s] = number of k-subsets of the positive ``weights`` summing to s."""
    total = sum(weights)
    big = math.comb(len(weights), k) >= 2**62
    dtype = object if big else np.int64
    table = np.zeros((k + 1, total + 1), dtype=dtype)
    table[0, 0] = 1
    for w in weights:
        # descending j so each weight is used at most once
        for j in range(k, 0, -1):
            table[j, w:] += table[j - 1, :-w]
    return [int(c) for c in table[k]]


def _exact_pvalue(doubled_ranks: np.ndarray, n_small: int, stat2: int) -> float:
    """Two-sided exact p: share of arrangements at least as far from the mean.

    Works on doubled ranks so tie-averaged ranks stay integral.
    """
    n = doubled_ranks.shape[0]
    center2 = n_small * (n + 1)  # twice the null mean of the rank sum
    counts = _subset_sum_counts([int(r) for r in doubled_ranks], n_small)
    dev = abs(stat2 - center2)
    hits = sum(c for s, c in enumerate(counts) if c and abs(s - center2) >= dev)
    return hits / math.comb(n, n_small)


def _normal_pvalue(ranks: np.ndarray, n1: int, n2: int, w: float) -> float:
    n = n1 + n2
    _, ties = np.unique(ranks, return_counts=True)
    tie_term = float(np.sum(ties**3 - ties)) / (n * (n - 1))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term)
    if var <= 0:
        return 1.0
    # continuity-corrected
    z = max(abs(w - n1 * (n + 1) / 2.0) - 0.5, 0.0) / math.sqrt(var)
    return float(min(1.0, 2.0 * ndtr(-z)))


def ranksum_pvalue(a: Sequence[float], b: Sequence[float], method: str = "auto") -> float:
    """Two-sided rank-sum p-value with average ranks for ties.

    ``method="auto"`` uses the exact permutation distribution when the smaller
    sample has at most 8 values and the tie-corrected normal approximation
    otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n1, n2 = a.size, b.size
    pooled = np.concatenate([a, b])
    if np.all(pooled == pooled[0]):
        return 1.0
    ranks = rankdata(pooled)
    if method == "auto":
        method = "exact" if min(n1, n2) <= EXACT_MAX else "normal"
    if method == "exact":
        doubled = np.rint(2 * ranks).astype(np.int64)
        # count subsets of the smaller sample; the deviation is symmetric in a and b
        if n1 <= n2:
            return _exact_pvalue(doubled, n1, int(doubled[:n1].sum()))
        return _exact_pvalue(doubled, n2, int(doubled[n1:].sum()))
    if method == "normal":
        return _normal_pvalue(ranks, n1, n2, float(ranks[:n1].sum()))
    raise ValueError(f"unknown method {method!r}")


def wilcoxon_ranksum(a: Sequence[float], b: Sequence[float], alpha: float = 0.05,
                     method: str = "auto") -> ComparisonMark:
    """Compare sample ``a`` against ``b`` for minimisation.

    ``+`` means ``a`` is significantly smaller (better) than ``b``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 3 or b.size < 3:
        raise ValueError("each sample needs at least 3 values")
    p = ranksum_pvalue(a, b, method)
    if p >= alpha:
        return ComparisonMark(Mark.EQUAL, p)
    ma, mb = np.median(a), np.median(b)
    if ma == mb:
        ranks = rankdata(np.concatenate([a, b]))
        ma, mb = ranks[: a.size].mean(), ranks[a.size:].mean()
    return ComparisonMark(Mark.BETTER if ma < mb else Mark.WORSE, p)


def average_ranks(error_table) -> np.ndarray:
    """Mean over functions (columns) of each algorithm's (row's) rank; 1 is best."""
    table = np.asarray(error_table, dtype=float)
    return rankdata(table, axis=0).mean(axis=1)


def holm_bonferroni(p_values: Sequence[float], alpha: float = 0.05) -> list[bool]:
    """Holm step-down; returns ``True`` (rejected) per hypothesis in input order."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    rejected = [False] * m
    for j, idx in enumerate(np.argsort(p, kind="stable")):
        if p[idx] < alpha / (m - j):
            rejected[idx] = True
        else:
            break
    return rejected


@dataclass(frozen=True)
class HolmRow:
    algorithm: str
    rank: float
    z: float
    p: float
    threshold: float
    rejected: bool


def holm_test(names: Sequence[str], ranks: Sequence[float], n_functions: int,
              alpha: float = 0.05) -> tuple[str, list[HolmRow]]:
    """Post-hoc comparison of every algorithm against the best-ranked one.

    ``z = (rank_j - rank_ref) / sqrt(k (k + 1) / (6 N))`` with k algorithms and
    N functions; ``p`` is the upper-tail normal probability of ``z``.
    """
    ranks = np.asarray(ranks, dtype=float)
    k = ranks.size
    ref = int(np.argmin(ranks))
    se = math.sqrt(k * (k + 1) / (6.0 * n_functions))
    others = [j for j in range(k) if j != ref]
    z = [(ranks[j] - ranks[ref]) / se for j in others]
    p = [float(ndtr(-zj)) for zj in z]
    rejected = holm_bonferroni(p, alpha)
    order = np.argsort(p, kind="stable")
    thresholds = {int(idx): alpha / (len(p) - pos) for pos, idx in enumerate(order)}
    rows = [
        HolmRow(names[j], float(ranks[j]), float(z[i]), p[i], thresholds[i], rejected[i])
        for i, j in enumerate(others)
    ]
    rows.sort(key=lambda r: r.p)
    return names[ref], rows


def win_tie_lose(marks: Iterable) -> tuple[int, int, int]:
    w = t = l = 0
    for m in marks:
        m = m.mark if isinstance(m, ComparisonMark) else Mark(m)
        if m is Mark.BETTER:
            w += 1
        elif m is Mark.EQUAL:
            t += 1
        else:
            l += 1
    return w, t, l
