"""Independent reference implementations used as test oracles.

They follow the textbook definitions literally (set intersections per depth,
exact fractions, naive recursion) and share no code with the package.
"""

from fractions import Fraction
from functools import lru_cache
from itertools import combinations


def rbo_ext_oracle(S, T, p):
    """Extrapolated RBO from per-depth prefix intersections, in exact arithmetic."""
    p = Fraction(p)
    k = min(len(S), len(T))
    agreement = [Fraction(len(set(S[:d]) & set(T[:d])), d) for d in range(1, k + 1)]
    x_k = agreement[-1] * k
    total = sum(agreement[d - 1] * p**d for d in range(1, k + 1))
    return x_k / k * p**k + (1 - p) / p * total


def rbo_min_oracle(S, T, p):
    p = Fraction(p)
    k = min(len(S), len(T))
    return (1 - p) / p * sum(Fraction(len(set(S[:d]) & set(T[:d])), d) * p**d
                             for d in range(1, k + 1))


def top_weight_oracle(p, k, depth=4000):
    """Share of RBO weight at ranks 1..k: rank i collects (1-p) p^(d-1) / d from every depth d >= i."""
    total = 0.0
    for d in range(1, depth + 1):
        w = (1 - p) * p ** (d - 1)
        total += w * min(k, d) / d
    return total


def levenshtein_oracle(S, T):
    S, T = tuple(S), tuple(T)

    @lru_cache(maxsize=None)
    def go(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(go(i - 1, j) + 1, go(i, j - 1) + 1, go(i - 1, j - 1) + (S[i - 1] != T[j - 1]))

    return go(len(S), len(T))


def mwu_enumeration_p(a, b):
    """Two-sided exact p by enumerating every relabelling of the pooled midranks."""
    pooled = list(a) + list(b)
    order = sorted(pooled)
    ranks = []
    for v in pooled:
        lo = order.index(v)
        hi = len(order) - order[::-1].index(v)
        ranks.append(Fraction(lo + 1 + hi, 2))
    n, m = len(a), len(b)
    mu = Fraction(n * m, 2)
    base = Fraction(n * (n + 1), 2)
    obs = abs(sum(ranks[:n]) - base - mu)
    hits = total = 0
    for idx in combinations(range(n + m), n):
        u = sum(ranks[i] for i in idx) - base
        total += 1
        hits += abs(u - mu) >= obs
    return Fraction(hits, total)
