"""Significance pipeline: bootstrap CIs, Mann-Whitney U, Bonferroni, ANOVA."""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from itertools import combinations
from typing import Sequence

import numpy as np
from scipy import stats as sps


class Stars(str, enum.Enum):
    NONE = ""
    ONE = "*"
    TWO = "**"
    THREE = "***"


def stars_for(p_adjusted: float) -> Stars:
    if p_adjusted is None or math.isnan(p_adjusted):
        return Stars.NONE
    if p_adjusted < 0.001:
        return Stars.THREE
    if p_adjusted < 0.01:
        return Stars.TWO
    if p_adjusted < 0.05:
        return Stars.ONE
    return Stars.NONE


@dataclass(frozen=True)
class StatResult:
    test: str
    group_labels: tuple[str, ...]
    statistic: float
    p_value: float
    family_size: int = 1
    p_adjusted: float | None = None
    stars: Stars | None = None
    degenerate: bool = False
    untestable: bool = False
    sizes: tuple[int, ...] = ()
    engine: str = ""
    query_category: str = ""
    comparison: str = ""

    def __post_init__(self):
        if self.family_size < 1:
            raise ValueError("family_size must be >= 1")
        object.__setattr__(self, "group_labels", tuple(self.group_labels))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        # unclamped: adjusted p may exceed 1
        object.__setattr__(self, "p_adjusted", self.p_value * self.family_size)
        object.__setattr__(self, "stars", stars_for(self.p_adjusted))

    @property
    def significant(self) -> bool:
        return not self.untestable and self.p_adjusted < 0.05

    def to_dict(self) -> dict:
        d = asdict(self)
        d["group_labels"] = list(self.group_labels)
        d["sizes"] = list(self.sizes)
        d["stars"] = self.stars.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StatResult":
        d = dict(d)
        d.pop("p_adjusted", None)
        d.pop("stars", None)
        d["group_labels"] = tuple(d["group_labels"])
        d["sizes"] = tuple(d.get("sizes", ()))
        return cls(**d)


@dataclass(frozen=True)
class BootstrapCI:
    mean: float
    lo: float
    hi: float
    resamples: int
    seed: int
    n: int = 0
    level: float = 0.95


# --- bootstrap ---------------------------------------------------------------

_BLOCK = 1000  # resamples per independently seeded block


def _block_means(values: np.ndarray, count: int, seed_seq: np.random.SeedSequence) -> np.ndarray:
    rng = np.random.default_rng(seed_seq)
    n = values.size
    rows = max(1, min(count, 2_000_000 // n))
    out = np.empty(count)
    for start in range(0, count, rows):
        stop = min(count, start + rows)
        idx = rng.integers(0, n, size=(stop - start, n))
        out[start:stop] = values[idx].mean(axis=1)
    return out


def bootstrap_ci(values: Sequence[float], resamples: int = 10_000, level: float = 0.95,
                 seed: int = 0, workers: int = 1) -> BootstrapCI:
    """Percentile bootstrap CI of the mean.

    Resamples are drawn in fixed blocks, each from its own child of
    ``SeedSequence(seed)``, so the result does not depend on ``workers``.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap_ci needs at least one value")
    if not 0 < level < 1:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if resamples < 1:
        raise ValueError("resamples must be >= 1")
    mean = float(x.mean())
    if np.all(x == x[0]):
        return BootstrapCI(mean, mean, mean, resamples, seed, x.size, level)
    counts = [min(_BLOCK, resamples - s) for s in range(0, resamples, _BLOCK)]
    children = np.random.SeedSequence(seed).spawn(len(counts))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _block_means(x, *a), zip(counts, children)))
    else:
        parts = [_block_means(x, c, s) for c, s in zip(counts, children)]
    means = np.concatenate(parts)
    alpha = (1 - level) / 2
    lo, hi = np.percentile(means, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(mean, float(lo), float(hi), resamples, seed, x.size, level)


# --- Mann-Whitney U ------------------------------------------------------------

EXACT_MAX_N = 14


def _u_null_counts(n: int, m: int) -> list[int]:
    """Number of labelings giving U = 0..n*m, for n and m untied observations.

    Coefficients of the Gaussian binomial [n+m choose n]_q, built as
    prod_{i=1..n} (1 - q^(m+i)) / (1 - q^i) with exact integer arithmetic.
    """
    size = n * m + 1
    poly = [1] + [0] * (size - 1)
    for i in range(1, n + 1):
        shift = m + i
        for u in range(size - 1, shift - 1, -1):
            poly[u] -= poly[u - shift]
        for u in range(i, size):
            poly[u] += poly[u - i]
    return poly


def _exact_p_untied(u_a: float, n: int, m: int) -> float:
    counts = _u_null_counts(n, m)
    total = sum(counts)
    u = int(round(min(u_a, n * m - u_a)))
    tail = sum(counts[: u + 1])
    return min(1.0, 2 * tail / total)


def _exact_p_tied(ranks: np.ndarray, n: int, u_a: float) -> float:
    N = ranks.size
    mu = n * (N - n) / 2
    obs = abs(u_a - mu)
    base = n * (n + 1) / 2
    hits = total = 0
    for combo in combinations(range(N), n):
        u = ranks[list(combo)].sum() - base
        total += 1
        hits += abs(u - mu) >= obs - 1e-9
    return hits / total


def _normal_p(u_a: float, n: int, m: int, ranks: np.ndarray) -> float:
    N = n + m
    _, t = np.unique(ranks, return_counts=True)
    tie_term = float((t**3 - t).sum()) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12 * ((N + 1) - tie_term)
    if var <= 0:
        return 1.0
    z = max(abs(u_a - n * m / 2) - 0.5, 0.0) / math.sqrt(var)
    return min(1.0, 2 * float(sps.norm.sf(z)))


def mann_whitney_u(a: Sequence[float], b: Sequence[float], mode: str = "auto",
                   labels: tuple[str, str] = ("a", "b")) -> StatResult:
    """Two-sided Mann-Whitney U test; the reported statistic is min(U_a, U_b).

    ``mode`` is ``"exact"`` (full null distribution), ``"normal"`` (tie-corrected
    normal approximation with continuity correction) or ``"auto"``, which uses
    the exact path for n + m <= 14 without ties.
    """
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    n, m = x.size, y.size
    if n == 0 or m == 0:
        raise ValueError("both groups must be non-empty")
    mode = mode.lower()
    if mode not in ("auto", "exact", "normal"):
        raise ValueError(f"unknown mode {mode!r}")
    pooled = np.concatenate([x, y])
    ranks = sps.rankdata(pooled)
    u_a = float(ranks[:n].sum() - n * (n + 1) / 2)
    u = min(u_a, n * m - u_a)
    common = dict(test="MannWhitneyU", group_labels=labels, statistic=u, sizes=(n, m))
    if np.all(pooled == pooled[0]):
        return StatResult(p_value=1.0, degenerate=True, **common)
    tied = np.unique(pooled).size < pooled.size
    if mode == "auto":
        mode = "exact" if (n + m <= EXACT_MAX_N and not tied) else "normal"
    if mode == "exact":
        p = _exact_p_tied(ranks, n, u_a) if tied else _exact_p_untied(u_a, n, m)
    else:
        p = _normal_p(u_a, n, m, ranks)
    return StatResult(p_value=p, **common)


# --- multiple comparisons ---------------------------------------------------------

def bonferroni(results: Sequence[StatResult], family_size: int) -> list[StatResult]:
    """Multiply each raw p by ``family_size``; results above 1 are kept as is."""
    if family_size < len(results):
        raise ValueError(
            f"family_size {family_size} is smaller than the {len(results)} results given"
        )
    return [replace(r, family_size=family_size) for r in results]


# --- ANOVA ---------------------------------------------------------------------------

def anova_oneway(groups: Sequence[Sequence[float]],
                 labels: Sequence[str] | None = None) -> StatResult:
    arrays = [np.asarray(g, dtype=float) for g in groups]
    if len(arrays) < 2:
        raise ValueError("anova_oneway needs at least two groups")
    if any(g.size < 2 for g in arrays):
        raise ValueError("every group needs at least two values")
    k = len(arrays)
    N = sum(g.size for g in arrays)
    grand = np.concatenate(arrays).mean()
    ssb = float(sum(g.size * (g.mean() - grand) ** 2 for g in arrays))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in arrays))
    labels = tuple(labels) if labels is not None else tuple(f"g{i}" for i in range(k))
    common = dict(test="AnovaF", group_labels=labels, sizes=tuple(g.size for g in arrays))
    scale = float(np.concatenate(arrays).var()) * N + 1e-300
    if ssw <= 1e-12 * scale or ssw == 0.0:
        if ssb <= 1e-12 * scale:
            return StatResult(statistic=0.0, p_value=1.0, degenerate=True, **common)
        return StatResult(statistic=math.inf, p_value=0.0, degenerate=True, **common)
    F = (ssb / (k - 1)) / (ssw / (N - k))
    p = float(sps.f.sf(F, k - 1, N - k))
    return StatResult(statistic=F, p_value=p, **common)


def untestable(test: str, labels, **context) -> StatResult:
    return StatResult(test=test, group_labels=tuple(labels), statistic=math.nan,
                      p_value=math.nan, untestable=True, **context)
