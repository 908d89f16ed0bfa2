"""Rank-similarity kernels used to compare two result pages.

All functions are pure. ``S`` and ``T`` are sequences of hashable item keys,
URLs for page comparisons or occurrence-indexed category tokens for content
comparisons.
"""

from __future__ import annotations

import math
from collections import Counter
from typing import Mapping, Sequence

from .model import MetricConfig, RankedResult


def _check_p(p: float) -> None:
    if not 0 < p < 1:
        raise ValueError(f"persistence p must lie in (0, 1), got {p}")


def _check_distinct(items: Sequence, name: str) -> None:
    if len(set(items)) != len(items):
        raise ValueError(f"{name} contains duplicate items")


def _overlaps(S: Sequence, T: Sequence, k: int) -> list[int]:
    """X_d = |S[:d] & T[:d]| for d = 1..k, computed incrementally."""
    seen_s, seen_t = set(), set()
    x, out = 0, []
    for d in range(k):
        s, t = S[d], T[d]
        if s == t:
            x += 1
        else:
            x += (s in seen_t) + (t in seen_s)
        seen_s.add(s)
        seen_t.add(t)
        out.append(x)
    return out


def rbo_ext(S: Sequence, T: Sequence, p: float = 0.7) -> float:
    """Extrapolated rank-biased overlap of two duplicate-free rankings.

    Evaluated at depth ``k = min(len(S), len(T))``; agreement observed at depth
    ``k`` is assumed to persist, so identical lists score exactly 1.

    >>> rbo_ext(list("abc"), list("bac"), 0.7)  # doctest: +ELLIPSIS
    0.7...
    """
    _check_p(p)
    if not S or not T:
        raise ValueError("rbo_ext needs two non-empty rankings")
    _check_distinct(S, "S")
    _check_distinct(T, "T")
    k = min(len(S), len(T))
    if list(S[:k]) == list(T[:k]):
        return 1.0  # the closed form sums to 1 only up to rounding
    X = _overlaps(S, T, k)
    acc = 0.0
    pd = 1.0
    for d in range(1, k + 1):
        pd *= p
        acc += X[d - 1] / d * pd
    value = X[k - 1] / k * pd + (1 - p) / p * acc
    # guard float drift at the endpoints
    return min(1.0, max(0.0, value))


def rbo_min(S: Sequence, T: Sequence, p: float = 0.7) -> float:
    """Truncated RBO: the infinite sum cut at depth k with no tail credit.

    Identical lists of length k score ``1 - p**k``; useful only as a
    sensitivity check against :func:`rbo_ext`.
    """
    _check_p(p)
    if not S or not T:
        raise ValueError("rbo_min needs two non-empty rankings")
    _check_distinct(S, "S")
    _check_distinct(T, "T")
    k = min(len(S), len(T))
    X = _overlaps(S, T, k)
    return (1 - p) / p * sum(X[d - 1] / d * p**d for d in range(1, k + 1))


def d_metric(S: Sequence, T: Sequence, cfg: MetricConfig = MetricConfig()) -> float:
    """Divergence ``1 - RBO``: 0 for identical rankings, 1 for disjoint ones."""
    sim = rbo_ext(S, T, cfg.p) if cfg.rbo_variant == "ext" else rbo_min(S, T, cfg.p)
    return 1.0 - sim


def prefix_weight(p: float, k: int) -> float:
    """Share of total RBO weight carried by ranks 1..k at persistence ``p``."""
    _check_p(p)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    head = sum(p**i / i for i in range(1, k))
    return 1 - p ** (k - 1) + k * (1 - p) / p * (math.log(1 / (1 - p)) - head)


def edit_distance(S: Sequence, T: Sequence) -> int:
    """Levenshtein distance over item sequences with unit costs."""
    if len(S) < len(T):
        S, T = T, S
    prev = list(range(len(T) + 1))
    for i, s in enumerate(S, start=1):
        cur = [i]
        for j, t in enumerate(T, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (s != t)))
        prev = cur
    return prev[-1]


def symdiff_top_k(S: Sequence, T: Sequence, k: int = 10) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return len(set(S[:k]) ^ set(T[:k]))


def common_top_k(S: Sequence, T: Sequence, k: int = 3) -> int:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return len(set(S[:k]) & set(T[:k]))


def missing_top_k(S: Sequence, T: Sequence, k: int = 3) -> int:
    """Items in either top-k that are absent from the other top-k.

    Complement of :func:`common_top_k` for duplicate-free prefixes; this is
    the count some figure captions describe.
    """
    return symdiff_top_k(S, T, k)


class UnmappedDomainError(KeyError):
    def __init__(self, domains):
        self.domains = sorted(set(domains))
        super().__init__(f"no category for domain(s): {', '.join(self.domains)}")


def occurrence_index(tokens: Sequence[str]) -> list[str]:
    """Make repeated tokens distinct: News, News -> News#1, News#2."""
    seen: Counter = Counter()
    out = []
    for t in tokens:
        seen[t] += 1
        out.append(f"{t}#{seen[t]}")
    return out


def to_category_sequence(results: Sequence[RankedResult], catmap: Mapping) -> list[str]:
    """Replace each result by its domain category, rank order kept.

    ``catmap`` maps domain to a category string, or to a ``(category, source)``
    pair as stored in :class:`serpaudit.annotate.CategoryMap`.
    """
    missing = [r.domain for r in results if r.domain not in catmap]
    if missing:
        raise UnmappedDomainError(missing)
    cats = []
    for r in results:
        c = catmap[r.domain]
        cats.append(c[0] if isinstance(c, tuple) else str(c))
    return occurrence_index(cats)


def distinct_categories(sequence: Sequence[str]) -> int:
    return len({tok.split("#", 1)[0] for tok in sequence})
