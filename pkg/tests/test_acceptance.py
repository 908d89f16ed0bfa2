"""One test per acceptance criterion, each reporting a single pass/fail line."""

import math
import random
import time
from fractions import Fraction
from itertools import combinations

import numpy as np
from scipy import stats as sps

from conftest import ACCEPTANCE_LINES
from helpers import success_rule_fixtures
from oracles import mwu_enumeration_p, rbo_ext_oracle
from serpaudit import annotate as ann
from serpaudit import validation
from serpaudit.crawler import make_profiles, success_filter
from serpaudit.metrics import d_metric, prefix_weight, rbo_ext
from serpaudit.model import (
    BotType,
    ComparisonRecord,
    Leaning,
    Metric,
    Query,
    QueryCategory,
    RankedResult,
    SerpRecord,
    Status,
    read_comparisons,
    read_serp_log,
    write_comparisons,
    write_serp_log,
)
from serpaudit.simengine import SimCorpus
from serpaudit.stats import Stars, anova_oneway, bonferroni, mann_whitney_u

SEED = 7


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _random_pair(rng: random.Random):
    universe = [f"u{i}" for i in range(20)]
    return (rng.sample(universe, rng.randint(1, 12)), rng.sample(universe, rng.randint(1, 12)))


def test_c01_prefix_weight():
    t0 = time.perf_counter()
    w = prefix_weight(0.7, 10)
    dt = time.perf_counter() - t0
    verdict(1, 0.99 <= w < 1.0 and dt < 1.0, f"prefix_weight(0.7, 10)={w:.6f} in {dt:.4f}s")


def test_c02_rbo_oracle():
    rng = random.Random(SEED)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        S, T = _random_pair(rng)
        worst = max(worst, abs(rbo_ext(S, T, 0.7) - float(rbo_ext_oracle(S, T, Fraction(7, 10)))))
    dt = time.perf_counter() - t0
    verdict(2, worst <= 1e-12 and dt < 5.0, f"max |rbo_ext - oracle|={worst:.3g} over 1000 pairs in {dt:.2f}s")


def test_c03_rbo_boundaries():
    rng = random.Random(SEED + 1)
    ident = disjoint = symmetric = True
    for _ in range(1000):
        S, T = _random_pair(rng)
        ident &= d_metric(S, list(S)) == 0.0
        other = [f"v{x}" for x in S]
        disjoint &= d_metric(S, other) == 1.0
        symmetric &= d_metric(S, T) == d_metric(T, S)
    verdict(3, ident and disjoint and symmetric,
            f"identical->0 {ident}, disjoint->1 {disjoint}, symmetric {symmetric} on 1000 pairs")


def _one_sample_per_u(n: int, m: int) -> dict[int, tuple[list, list]]:
    """One untied (a, b) arrangement for every attainable U of group a."""
    N = n + m
    out = {}
    for idx in combinations(range(N), n):
        a = list(idx)
        u = sum(a) + n - n * (n + 1) // 2       # ranks are value + 1
        if u not in out:
            out[u] = (a, [v for v in range(N) if v not in idx])
    return out


def test_c04_mwu_exactness():
    t0 = time.perf_counter()
    worst_exact = worst_normal = 0.0
    where = None
    for n in range(1, 8):
        for m in range(1, 8):
            for a, b in _one_sample_per_u(n, m).values():
                oracle = float(mwu_enumeration_p(a, b))
                exact = mann_whitney_u(a, b, mode="exact").p_value
                normal = mann_whitney_u(a, b, mode="normal").p_value
                worst_exact = max(worst_exact, abs(exact - oracle))
                if abs(normal - oracle) > worst_normal:
                    worst_normal, where = abs(normal - oracle), (n, m, a, b)
    dt = time.perf_counter() - t0
    ok = worst_exact <= 1e-12 and worst_normal <= 0.02 and dt < 30
    verdict(4, ok, f"exact vs enumeration max |dp|={worst_exact:.3g}; normal vs exact max "
                   f"|dp|={worst_normal:.4f} (tolerance 0.02) at n,m={where[:2]}; {dt:.1f}s")


def test_c05_bonferroni_table():
    def adj(p):
        r = mann_whitney_u([0, 1], [2, 3], mode="normal")
        from dataclasses import replace
        return bonferroni([replace(r, p_value=p)], 12)[0]

    a, b = adj(0.002), adj(0.88)
    ok = (math.isclose(a.p_adjusted, 0.024, abs_tol=1e-12) and a.stars is Stars.ONE
          and math.isclose(b.p_adjusted, 10.56, abs_tol=1e-9) and b.p_adjusted > 1
          and b.stars is Stars.NONE)
    verdict(5, ok, f"0.002x12={a.p_adjusted:.6g} stars={a.stars.value!r}; "
                   f"0.88x12={b.p_adjusted:.6g} (unclamped)")


def test_c06_anova():
    r = anova_oneway([[1, 2, 3], [2, 3, 4], [3, 4, 5]])
    oracle = float(sps.f.sf(3.0, 2, 6))
    ok = r.statistic == 3.0 and abs(r.p_value - 0.125) <= 0.001 and abs(r.p_value - oracle) < 1e-12
    verdict(6, ok, f"F={r.statistic!r} p={r.p_value:.6f} (F-CDF oracle {oracle:.6f})")


def test_c07_success_rule():
    recs, kept_ids, dropped = success_rule_fixtures()
    kept, report = success_filter(recs)
    got_kept = sorted(r.bot_id for r in kept)
    got_dropped = {(e.audit_id, e.engine, e.location, e.query_text) for e in report}
    ok = got_kept == sorted(kept_ids) and got_dropped == dropped
    verdict(7, ok, f"kept {len(got_kept)} bots, dropped {len(got_dropped)} cells; "
                   f"match hand enumeration={ok}")


def _scenario(n, fn, tmp_path, limit_s):
    res = fn(seed=SEED, workdir=tmp_path)
    verdict(n, res.passed and res.seconds < limit_s, f"{res.detail} ({res.seconds:.1f}s)")
    return res


def test_c08_null_fidelity(tmp_path):
    _scenario(8, validation.null_fidelity, tmp_path, 120)


def test_c09_detection(tmp_path):
    corpus = SimCorpus(seed=SEED)
    counts = {c: sum(q.category is c for q in corpus.queries) for c in QueryCategory}
    fleet = make_profiles("Type1")
    per_loc = {p.location for p in fleet}
    assert counts == {QueryCategory.GENERAL: 27, QueryCategory.SPECIFIC: 27}
    assert len(per_loc) == 4 and len(fleet) == 40
    _scenario(9, validation.detection, tmp_path, 300)


def test_c10_specific_gap(tmp_path):
    first = validation.specific_gap(seed=SEED, workdir=tmp_path / "a")
    again = validation.specific_gap(seed=SEED, workdir=tmp_path / "b")
    verdict(10, first.passed and first.measured == again.measured,
            f"{first.detail}; deterministic={first.measured == again.measured}")


def test_c11_history(tmp_path):
    _scenario(11, validation.history_effect, tmp_path, 600)


def test_c12_leaning(tmp_path):
    res = validation.leaning_pipeline(seed=SEED, workdir=tmp_path)
    # the consensus filter on its own: only exact agreement survives
    L, Le = ann.LeaningLabel, Leaning
    fixtures = [L("u1", "c1", Le.PRO_ISRAEL), L("u1", "c2", Le.NEUTRAL),
                L("u2", "c1", Le.SLIGHTLY_PRO_ISRAEL), L("u2", "c2", Le.PRO_ISRAEL),
                L("u3", "c1", Le.NEUTRAL), L("u3", "c2", Le.NEUTRAL)]
    resolved = ann.consensus(fixtures)
    filt = resolved["u1"] == resolved["u2"] == ann.UNRESOLVED and resolved["u3"] != ann.UNRESOLVED
    verdict(12, res.passed and filt, f"{res.detail}; fixture consensus filter ok={filt}")


def _synthetic(n: int, rng: np.random.Generator):
    engines = ["google", "bing", "duckduckgo"]
    locs = ["IL", "SA", "BR", "US"]
    out = []
    for i in range(n):
        status = Status.OK if rng.random() > 0.1 else Status.TIMEOUT
        k = int(rng.integers(1, 11)) if status is Status.OK else 0
        results = tuple(RankedResult(j, f"https://s{int(rng.integers(0, 500))}.example.org/p{j}?q=é",
                                     title=f"t{i}-{j}", snippet="x" * int(rng.integers(0, 5)))
                        for j in range(1, k + 1))
        q = Query(f"query {i % 97}", QueryCategory.GENERAL if i % 2 else QueryCategory.SPECIFIC,
                  bool(i % 3 == 0))
        out.append(SerpRecord(f"a{i % 7}", engines[i % 3], f"bot{i}", q, int(rng.integers(0, 2**40)),
                              results, status, BotType.TYPE1, locs[i % 4], "en",
                              ip_label=f"ip{i % 31}"))
    return out


def test_c13_golden_and_roundtrip(tmp_path):
    golden = validation.golden_formats(seed=SEED, workdir=tmp_path / "golden")
    rng = np.random.default_rng(SEED)
    recs = _synthetic(10_000, rng)
    write_serp_log(recs, tmp_path / "serp.jsonl")
    serp_ok = list(read_serp_log(tmp_path / "serp.jsonl")) == recs
    comps = [ComparisonRecord(r.audit_id, r.engine, r.query, r.bot_id, f"other{i}", bool(i % 2),
                              Metric.DRBO, float(rng.random()), "Type1")
             for i, r in enumerate(recs)]
    write_comparisons(comps, tmp_path / "cmp.jsonl")
    cmp_ok = list(read_comparisons(tmp_path / "cmp.jsonl")) == comps
    verdict(13, golden.passed and serp_ok and cmp_ok,
            f"{golden.detail}; 10k SERP round trip={serp_ok}; 10k comparison round trip={cmp_ok}")
