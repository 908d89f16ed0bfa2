import math
from dataclasses import replace
from itertools import product

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats as sps

from serpaudit.stats import (
    Stars,
    StatResult,
    anova_oneway,
    bonferroni,
    bootstrap_ci,
    mann_whitney_u,
    stars_for,
    untestable,
)

from oracles import mwu_enumeration_p


def test_small_exact_example():
    r = mann_whitney_u([1, 2], [3, 4], mode="exact")
    assert r.statistic == 0
    assert r.p_value == pytest.approx(1 / 3, abs=1e-15)


@pytest.mark.parametrize("n,m", [(1, 1), (2, 3), (3, 3), (4, 2), (5, 5), (7, 6)])
def test_exact_untied_matches_enumeration(n, m):
    rng = np.random.default_rng(n * 10 + m)
    for _ in range(5):
        vals = rng.permutation(n + m).astype(float)
        a, b = vals[:n], vals[n:]
        got = mann_whitney_u(a, b, mode="exact").p_value
        assert got == pytest.approx(float(mwu_enumeration_p(a, b)), abs=1e-12)


@given(st.lists(st.integers(0, 4), min_size=1, max_size=5),
       st.lists(st.integers(0, 4), min_size=1, max_size=5))
def test_exact_tied_matches_enumeration(a, b):
    r = mann_whitney_u(a, b, mode="exact")
    if r.degenerate:
        assert len(set(a + b)) == 1 and r.p_value == 1.0
        return
    assert r.p_value == pytest.approx(float(mwu_enumeration_p(a, b)), abs=1e-12)


@pytest.mark.parametrize("n,m", [(3, 4), (6, 7), (8, 8)])
def test_exact_agrees_with_scipy(n, m):
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=n), rng.normal(0.7, size=m)
    ours = mann_whitney_u(a, b, mode="exact")
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="exact")
    assert ours.p_value == pytest.approx(ref.pvalue, abs=1e-12)
    assert ours.statistic == min(ref.statistic, n * m - ref.statistic)


def test_normal_agrees_with_scipy_including_ties():
    rng = np.random.default_rng(5)
    a = rng.integers(0, 6, size=40)
    b = rng.integers(1, 7, size=35)
    ours = mann_whitney_u(a, b, mode="normal")
    ref = sps.mannwhitneyu(a, b, alternative="two-sided", method="asymptotic", use_continuity=True)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_auto_mode_switch():
    small = mann_whitney_u([1, 2, 3], [4, 5, 6])
    assert small.p_value == pytest.approx(0.1, abs=1e-15)  # exact: 2/20
    tied = mann_whitney_u([1, 1, 2], [2, 3, 3])
    ref = sps.mannwhitneyu([1, 1, 2], [2, 3, 3], method="asymptotic", use_continuity=True)
    assert tied.p_value == pytest.approx(ref.pvalue, rel=1e-10)


def test_degenerate_and_errors():
    r = mann_whitney_u([0.0] * 5, [0.0] * 4)
    assert r.degenerate and r.p_value == 1.0 and not r.significant
    with pytest.raises(ValueError):
        mann_whitney_u([], [1])
    with pytest.raises(ValueError):
        mann_whitney_u([1], [2], mode="magic")


def test_bonferroni_and_stars():
    r = StatResult("t", ("a", "b"), 1.0, 0.002)
    (adj,) = bonferroni([r], 12)
    assert adj.p_adjusted == pytest.approx(0.024) and adj.stars is Stars.ONE
    (big,) = bonferroni([replace(r, p_value=0.88)], 12)
    assert big.p_adjusted == pytest.approx(10.56) and big.p_adjusted > 1
    with pytest.raises(ValueError):
        bonferroni([r, r], 1)


@pytest.mark.parametrize("p,stars", [(0.0009, "***"), (0.001, "**"), (0.0099, "**"),
                                     (0.01, "*"), (0.049, "*"), (0.05, ""), (2.0, ""),
                                     (math.nan, "")])
def test_star_thresholds(p, stars):
    assert stars_for(p).value == stars


@given(st.floats(0, 5), st.floats(0, 5))
def test_stars_monotone(p1, p2):
    order = ["", "*", "**", "***"]
    if p1 <= p2:
        assert order.index(stars_for(p1).value) >= order.index(stars_for(p2).value)


def test_untestable_never_significant():
    r = untestable("MannWhitneyU", ("a", "b"), engine="x")
    assert r.untestable and math.isnan(r.p_adjusted) and not r.significant
    assert StatResult.from_dict(r.to_dict()).engine == "x"


def test_anova_reference():
    r = anova_oneway([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    assert r.statistic == 3.0
    assert r.p_value == pytest.approx(sps.f.sf(3.0, 2, 6), abs=1e-12)
    assert r.p_value == pytest.approx(0.125, abs=0.001)


def test_anova_matches_scipy():
    rng = np.random.default_rng(1)
    groups = [rng.normal(mu, 1, size=n) for mu, n in ((0, 10), (0.5, 12), (1, 8))]
    ours = anova_oneway(groups)
    ref = sps.f_oneway(*groups)
    assert ours.statistic == pytest.approx(ref.statistic, rel=1e-12)
    assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-9)


def test_anova_degenerate():
    r = anova_oneway([[1, 1], [1, 1]])
    assert r.degenerate and r.p_value == 1.0
    r = anova_oneway([[1, 1], [2, 2]])
    assert r.degenerate and r.p_value == 0.0 and math.isinf(r.statistic)
    with pytest.raises(ValueError):
        anova_oneway([[1, 2]])


def test_anova_null_calibration():
    # p-values under the null are uniform (vectorized F statistics)
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4000, 3, 6))
    gm = x.mean(axis=(1, 2), keepdims=True)
    means = x.mean(axis=2, keepdims=True)
    ssb = (6 * (means - gm) ** 2).sum(axis=(1, 2))
    ssw = ((x - means) ** 2).sum(axis=(1, 2))
    F = (ssb / 2) / (ssw / 15)
    ours = np.array([anova_oneway(list(g)).statistic for g in x[:50]])
    assert np.allclose(ours, F[:50], rtol=1e-12)
    p = sps.f.sf(F, 2, 15)
    assert sps.kstest(p, "uniform").pvalue > 0.01


def test_bootstrap_deterministic_and_worker_independent():
    vals = np.random.default_rng(2).exponential(size=200)
    a = bootstrap_ci(vals, resamples=3000, seed=9, workers=1)
    b = bootstrap_ci(vals, resamples=3000, seed=9, workers=3)
    assert a == b
    assert a.lo <= a.mean <= a.hi
    assert bootstrap_ci(vals, resamples=3000, seed=10) != a


def test_bootstrap_constant_and_errors():
    c = bootstrap_ci([0.5] * 7)
    assert c.lo == c.mean == c.hi == 0.5
    with pytest.raises(ValueError):
        bootstrap_ci([])
    with pytest.raises(ValueError):
        bootstrap_ci([1, 2], level=1.0)


@pytest.mark.slow
def test_bootstrap_coverage():
    rng = np.random.default_rng(4)
    hits = 0
    trials = 200
    for t in range(trials):
        x = rng.normal(size=60)
        ci = bootstrap_ci(x, resamples=1000, seed=t)
        hits += ci.lo <= 0.0 <= ci.hi
    assert 0.88 <= hits / trials <= 0.99


def test_mwu_null_uniformity_exact():
    # exact null: P(p <= alpha) <= alpha over every labelling of 5 vs 5
    n = m = 5
    ps = []
    for mask in product([0, 1], repeat=n + m):
        if sum(mask) != n:
            continue
        a = [i for i, f in enumerate(mask) if f]
        b = [i for i, f in enumerate(mask) if not f]
        ps.append(mann_whitney_u(a, b, mode="exact").p_value)
    ps = np.array(ps)
    for alpha in (0.01, 0.05, 0.1, 0.5):
        assert (ps <= alpha).mean() <= alpha + 1e-12
