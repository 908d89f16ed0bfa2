import math
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from serpaudit.metrics import (
    UnmappedDomainError,
    common_top_k,
    d_metric,
    distinct_categories,
    edit_distance,
    missing_top_k,
    occurrence_index,
    prefix_weight,
    rbo_ext,
    rbo_min,
    symdiff_top_k,
    to_category_sequence,
)
from serpaudit.model import MetricConfig, RankedResult

from oracles import levenshtein_oracle, rbo_ext_oracle, rbo_min_oracle, top_weight_oracle

rankings = st.lists(st.integers(0, 15), min_size=1, max_size=12, unique=True)


def test_worked_examples():
    assert rbo_ext(list("abc"), list("bac"), 0.7) == pytest.approx(0.7, abs=1e-15)
    assert rbo_ext(list("abcd"), list("acbe"), 0.7) == pytest.approx(0.80925, abs=1e-12)
    assert d_metric(list("abc"), list("abc")) == 0.0
    assert d_metric(list("abc"), list("xyz")) == 1.0


@given(rankings, rankings, st.sampled_from([0.1, 0.5, 0.7, 0.9, 0.98]))
def test_rbo_matches_oracle(S, T, p):
    assert abs(rbo_ext(S, T, p) - float(rbo_ext_oracle(S, T, p))) <= 1e-12
    assert abs(rbo_min(S, T, p) - float(rbo_min_oracle(S, T, p))) <= 1e-12


@given(rankings, rankings)
def test_rbo_symmetric_and_bounded(S, T):
    v = rbo_ext(S, T)
    assert v == rbo_ext(T, S)
    assert 0.0 <= v <= 1.0
    assert rbo_min(S, T) <= v + 1e-15


@given(rankings)
def test_identical_is_exactly_one(S):
    assert rbo_ext(S, list(S)) == 1.0


def test_truncated_variant_on_identical_lists():
    assert rbo_min(list(range(10)), list(range(10)), 0.7) == pytest.approx(1 - 0.7**10)
    cfg = MetricConfig(rbo_variant="min")
    assert d_metric(list("ab"), list("ab"), cfg) == pytest.approx(0.49)


def test_uneven_lengths_use_shorter_depth():
    assert rbo_ext(list("abc"), list("abcdef")) == 1.0


@pytest.mark.parametrize("bad", [0, 1, -0.1, 1.5])
def test_invalid_p(bad):
    with pytest.raises(ValueError):
        rbo_ext(["a"], ["a"], bad)


def test_rejects_empty_and_duplicates():
    with pytest.raises(ValueError):
        rbo_ext([], ["a"])
    with pytest.raises(ValueError):
        rbo_ext(["a", "a"], ["a", "b"])


@pytest.mark.parametrize("p,k", [(0.7, 10), (0.9, 10), (0.5, 3), (0.1, 1), (0.98, 50)])
def test_prefix_weight_against_series(p, k):
    assert prefix_weight(p, k) == pytest.approx(top_weight_oracle(p, k), abs=1e-9)


def test_prefix_weight_reference_values():
    assert prefix_weight(0.7, 10) == pytest.approx(0.99366, abs=5e-6)
    assert prefix_weight(0.9, 10) == pytest.approx(0.8556, abs=5e-5)


@given(st.lists(st.integers(0, 4), max_size=8), st.lists(st.integers(0, 4), max_size=8))
def test_edit_distance_oracle(S, T):
    assert edit_distance(S, T) == levenshtein_oracle(S, T)


def test_edit_distance_examples():
    assert edit_distance("kitten", "sitting") == 3
    assert edit_distance([], list("abc")) == 3


def test_top_k_counts():
    S, T = list("abcdefghijkl"), list("abzyefghijkq")
    assert symdiff_top_k(S, T, 10) == 4
    assert common_top_k(S, T, 3) == 2
    assert missing_top_k(S, T, 3) == 2
    with pytest.raises(ValueError):
        common_top_k(S, T, 0)


@given(rankings, rankings)
def test_symdiff_common_complement(S, T):
    k = 3
    a, b = S[:k], T[:k]
    assert symdiff_top_k(S, T, k) == len(a) + len(b) - 2 * common_top_k(S, T, k)


def test_category_sequences():
    res = [RankedResult(i, u) for i, u in enumerate(
        ["https://a.com/1", "https://b.com/2", "https://c.com/3"], start=1)]
    cmap = {"a.com": "News", "b.com": ("News", "Auto"), "c.com": "Reference"}
    seq = to_category_sequence(res, cmap)
    assert seq == ["News#1", "News#2", "Reference#1"]
    assert distinct_categories(seq) == 2
    with pytest.raises(UnmappedDomainError) as ei:
        to_category_sequence(res, {"a.com": "News"})
    assert ei.value.domains == ["b.com", "c.com"]


def test_same_categories_different_urls_give_zero():
    a = [RankedResult(i, f"https://n{i}.com/") for i in range(1, 4)]
    b = [RankedResult(i, f"https://m{i}.com/") for i in range(1, 4)]
    cmap = {r.domain: "News" for r in a + b}
    assert d_metric([r.url for r in a], [r.url for r in b]) == 1.0
    assert d_metric(to_category_sequence(a, cmap), to_category_sequence(b, cmap)) == 0.0


def test_occurrence_index_restores_uniqueness():
    toks = occurrence_index(["x", "y", "x", "x"])
    assert len(set(toks)) == 4


def test_seeded_batch_matches_oracle():
    rng = random.Random(11)
    worst = 0.0
    for _ in range(200):
        S = rng.sample(range(20), rng.randint(1, 12))
        T = rng.sample(range(20), rng.randint(1, 12))
        worst = max(worst, abs(rbo_ext(S, T) - float(rbo_ext_oracle(S, T, 0.7))))
    assert worst <= 1e-12 and math.isfinite(worst)
