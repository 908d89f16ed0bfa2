"""End-to-end scenarios on the simulated engine.

Each scenario injects a known effect (or none), runs the full pipeline from
audit to statistics, and checks that the pipeline reports what was injected.
They back ``serpaudit validate e2e`` and the acceptance tests.
"""

from __future__ import annotations

import hashlib
import logging
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import annotate as ann
from .analyze import (
    Grouping,
    PairingSpec,
    group_means,
    make_pairs,
    run_cross_type_tests,
    run_figure2_tests,
)
from .crawler import (
    AuditPlan,
    WarmupSpec,
    balance,
    build_history,
    make_profiles,
    run_audit,
)
from .model import (
    BotProfile,
    BotType,
    HistoryKind,
    Leaning,
    QueryCategory,
    SerpRecord,
    read_serp_log,
)
from .report import Figure, ReportSpec, emit_chart, grouped_panel, read_chart_csv
from .simengine import EnginePersona, SimClient, SimCorpus, SimEngine, write_url_list

log = logging.getLogger(__name__)

# scenario knobs; the weights are large against the noise so effects are clear
DETECTION_NOISE = 0.1
W_LOC_LADDER = (0.0, 0.25, 0.5, 1.0)
SPECIFIC_BOOST = 0.5
GAP_W_LOC = 0.25
HISTORY_W = 3.0
HISTORY_NOISE = 0.02
LEANING_BONUS = 0.2


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(fn: Callable[..., CheckResult]):
    def wrapper(*args, **kwargs) -> CheckResult:
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def simulate(persona: EnginePersona, corpus: SimCorpus, profiles: Sequence[BotProfile],
             log_path, queries=None, audit_id: str = "sim") -> list[SerpRecord]:
    """Run one audit against the in-process simulator and read the log back."""
    log_path = Path(log_path)
    if log_path.exists():
        log_path.unlink()
    plan = AuditPlan(audit_id, [persona.name], queries or corpus.queries, profiles)
    run_audit(plan, [SimClient(SimEngine(persona, corpus))], log_path)
    return list(read_serp_log(log_path))


def pipeline_pairs(records: Sequence[SerpRecord], seed: int,
                   spec: PairingSpec = PairingSpec()) -> list:
    """Success filter, balance and pairing."""
    from .crawler import success_filter

    kept, _ = success_filter(records)
    return make_pairs(balance(kept, seed=seed), spec)


def _mean(pairs, grouping: Grouping, category: QueryCategory | None = None) -> float:
    vals = [p.value for p in pairs if (p.same_location == (grouping is Grouping.SAME))
            and (category is None or p.query.category is category)]
    return float(np.mean(vals)) if vals else float("nan")


def _workdir(workdir) -> Path:
    if workdir is None:
        workdir = tempfile.mkdtemp(prefix="serpaudit-e2e-")
    p = Path(workdir)
    p.mkdir(parents=True, exist_ok=True)
    return p


@_timed
def null_fidelity(seed: int = 7, workdir=None) -> CheckResult:
    """No personalization and no noise: every D is 0 and nothing is significant."""
    wd = _workdir(workdir)
    corpus = SimCorpus(seed=seed)
    recs = simulate(EnginePersona(seed=seed), corpus, make_profiles("Type1"), wd / "null.log")
    pairs = pipeline_pairs(recs, seed)
    tests = run_figure2_tests(pairs)
    max_d = max(p.value for p in pairs)
    n_sig = sum(t.significant for t in tests)
    ok = bool(pairs) and max_d == 0.0 and n_sig == 0
    return CheckResult("null fidelity", ok,
                       f"{len(pairs)} pairs, max D={max_d}, significant={n_sig}/{len(tests)}",
                       {"max_d": max_d, "significant": n_sig, "pairs": len(pairs)})


@_timed
def detection(seed: int = 7, workdir=None, resamples: int = 2000) -> CheckResult:
    """Location weight 1 must separate the groupings; cross-location D must rise with the weight."""
    wd = _workdir(workdir)
    corpus = SimCorpus(seed=seed)
    profiles = make_profiles("Type1")
    diffs, gap, p_adj, chart_ok = [], None, None, False
    for w in W_LOC_LADDER:
        persona = EnginePersona(w_loc=w, noise_sigma=DETECTION_NOISE, seed=seed)
        pairs = pipeline_pairs(simulate(persona, corpus, profiles, wd / f"det-{w}.log"), seed)
        diffs.append(_mean(pairs, Grouping.DIFF))
        if w == 1.0:
            gap = _mean(pairs, Grouping.DIFF) - _mean(pairs, Grouping.SAME)
            # pooled over query categories, one test
            from .analyze import _values
            from .stats import bonferroni, mann_whitney_u

            res = mann_whitney_u(_values(pairs, grouping=Grouping.SAME),
                                 _values(pairs, grouping=Grouping.DIFF))
            p_adj = bonferroni([res], 12)[0].p_adjusted
            means = group_means(pairs, seed=seed, resamples=resamples)
            paths, _ = emit_chart(ReportSpec((), Figure.FIG2_PANEL, str(wd / "det-report")),
                                  [grouped_panel("D by location grouping", means,
                                                 run_figure2_tests(pairs))])
            rows = [r for r in read_chart_csv(paths[-1]) if r["kind"] == "bar"]
            val = {r["series"]: float(r["value"]) for r in rows}
            chart_ok = all(val[f"DiffLocation/{c.value}"] > val[f"SameLocation/{c.value}"]
                           for c in QueryCategory)
    mono = all(b > a for a, b in zip(diffs, diffs[1:]))
    ok = gap > 0.2 and p_adj < 0.01 and mono and chart_ok
    return CheckResult(
        "detection", ok,
        f"gap={gap:.4f} p_adj={p_adj:.3g} diff-D ladder={[round(d, 4) for d in diffs]} "
        f"monotone={mono} chart dark>light={chart_ok}",
        {"gap": gap, "p_adjusted": p_adj, "ladder": diffs, "monotone": mono, "chart": chart_ok})


@_timed
def specific_gap(seed: int = 7, workdir=None) -> CheckResult:
    """A boost on specific queries makes their cross-location D exceed the general ones."""
    wd = _workdir(workdir)
    corpus = SimCorpus(seed=seed)
    persona = EnginePersona(w_loc=GAP_W_LOC, specific_affinity_boost=SPECIFIC_BOOST,
                            noise_sigma=DETECTION_NOISE, seed=seed)
    pairs = pipeline_pairs(simulate(persona, corpus, make_profiles("Type1"), wd / "gap.log"), seed)
    spec_d = _mean(pairs, Grouping.DIFF, QueryCategory.SPECIFIC)
    gen_d = _mean(pairs, Grouping.DIFF, QueryCategory.GENERAL)
    return CheckResult("specific/general gap", spec_d > gen_d,
                       f"D(Specific,Diff)={spec_d:.4f} D(General,Diff)={gen_d:.4f}",
                       {"specific": spec_d, "general": gen_d})


def warm_fleet(corpus: SimCorpus, persona: EnginePersona, workdir: Path, seed: int,
               locations=None) -> list[BotProfile]:
    """Type 3 fleet with histories built by visiting the simulator's tracking pages."""
    url_list = workdir / "warmup_urls.csv"
    write_url_list(url_list, locations=locations)
    client = SimClient(SimEngine(persona, corpus))
    spec = WarmupSpec(str(url_list), seed=seed)
    kw = {"locations": locations} if locations else {}
    out = []
    for p in make_profiles("Type3", **kw):
        out.append(p if p.history_kind is HistoryKind.STATELESS else build_history(p, spec, client))
    return out


@_timed
def history_effect(seed: int = 7, workdir=None) -> CheckResult:
    """History weight only: Type3 differs from Type2, Type2 does not differ from Type1."""
    wd = _workdir(workdir)
    corpus = SimCorpus(seed=seed)
    persona = EnginePersona(w_hist=HISTORY_W, noise_sigma=HISTORY_NOISE, seed=seed)
    subset = [q for q in corpus.queries if q.in_type3_subset]
    by_type = {}
    fleets = {BotType.TYPE1: make_profiles("Type1"), BotType.TYPE2: make_profiles("Type2"),
              BotType.TYPE3: warm_fleet(corpus, persona, wd, seed)}
    for t, profiles in fleets.items():
        recs = simulate(persona, corpus, profiles, wd / f"hist-{t.value}.log", queries=subset)
        by_type[t] = pipeline_pairs(recs, seed)
    tests = run_cross_type_tests(by_type)
    t32 = [t for t in tests if t.group_labels == ("Type2", "Type3")]
    t21 = [t for t in tests if t.group_labels == ("Type1", "Type2")]
    any32 = any(t.significant for t in t32)
    any21 = any(t.significant for t in t21)
    ok = any32 and not any21 and tests[0].family_size == 36
    mins = min(t.p_adjusted for t in t32)
    return CheckResult(
        "history effect", ok,
        f"Type3-vs-Type2 significant in {sum(t.significant for t in t32)}/{len(t32)} "
        f"(min p_adj={mins:.3g}); Type2-vs-Type1 significant in "
        f"{sum(t.significant for t in t21)}/{len(t21)}",
        {"t3_vs_t2": any32, "t2_vs_t1": any21, "family": tests[0].family_size})


def coder_fixtures(truth: dict[str, Leaning], seed: int) -> tuple[list[ann.LeaningLabel], set]:
    """Two simulated coders per url; every tenth url gets a disagreeing second coder.

    Returns the labels and the urls that must stay unresolved.
    """
    from .crawler import stable_rng

    rng = stable_rng("coders", seed)
    labels, disagree = [], set()
    scale = list(Leaning)
    for i, url in enumerate(sorted(truth)):
        lab = truth[url]
        labels.append(ann.LeaningLabel(url, "coder-a", lab, survey_id="s1"))
        second = lab
        if i % 10 == 0:
            j = scale.index(lab)
            second = scale[j + 1] if j + 1 < len(scale) else scale[j - 1]
            disagree.add(url)
        labels.append(ann.LeaningLabel(url, "coder-b", second, survey_id="s1"))
    order = rng.permutation(len(labels))
    return [labels[i] for i in order], disagree


@_timed
def leaning_pipeline(seed: int = 7, workdir=None) -> CheckResult:
    """Pro-Israel news boosted in IL: its share is larger in the top 3 than overall."""
    wd = _workdir(workdir)
    corpus = SimCorpus(seed=seed)
    persona = EnginePersona(leaning_bias=(("IL", Leaning.PRO_ISRAEL.value, LEANING_BONUS),),
                            noise_sigma=DETECTION_NOISE, seed=seed)
    specific = [q for q in corpus.queries if q.category is QueryCategory.SPECIFIC]
    recs = simulate(persona, corpus, make_profiles("Type1", per_location=4),
                    wd / "leaning.log", queries=specific)
    cmap = ann.categorize_domains(ann.domains_in(recs), ann.StubCategoryAnnotator(),
                                  cache_dir=wd / "category-cache")
    truth_cat = corpus.categories()
    cat_hits = np.mean([cmap.category(d) == truth_cat[d] for d in cmap])
    engine = SimEngine(persona, corpus)
    truth = {}
    for url in ann.iter_news_urls(recs, cmap):
        doc = corpus.by_url[url]
        truth[url] = Leaning(engine.truth(doc.doc_id)["leaning"])
    labels, disagree = coder_fixtures(truth, seed)
    resolved = ann.consensus(labels)
    dropped_ok = all(resolved[u] == ann.UNRESOLVED for u in disagree)
    kept_ok = all(resolved[u] == truth[u] for u in truth if u not in disagree)
    all_cells = ann.leaning_proportions(recs, resolved, cmap, ann.Scope.ALL)
    top_cells = ann.leaning_proportions(recs, resolved, cmap, ann.Scope.TOP3)
    sums_ok = all(abs(sum(c.proportions) - 1.0) <= 1e-9
                  for c in list(all_cells.values()) + list(top_cells.values()))
    key = (persona.name, "IL")
    a = all_cells[key].proportions[0]
    t = top_cells[key].proportions[0]
    ok = (t - a) >= 0.1 and sums_ok and dropped_ok and kept_ok
    return CheckResult(
        "leaning pipeline", ok,
        f"IL pro-Israel share Top3={t:.4f} All={a:.4f} (diff {t - a:.4f}); sums ok={sums_ok}; "
        f"disagreements unresolved={dropped_ok}; category recovery={cat_hits:.3f}",
        {"top3": t, "all": a, "sums_ok": sums_ok, "consensus_ok": dropped_ok and kept_ok,
         "category_recovery": float(cat_hits)})


def _mixed_queries(corpus: SimCorpus, per_category: int) -> list:
    out = []
    for c in QueryCategory:
        out += [q for q in corpus.queries if q.category is c][:per_category]
    return out


def _sha(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@_timed
def golden_formats(seed: int = 7, workdir=None) -> CheckResult:
    """Same seed twice: byte-identical SERP logs and charts."""
    wd = _workdir(workdir)
    digests = []
    for run in (1, 2):
        corpus = SimCorpus(seed=seed)
        persona = EnginePersona(w_loc=0.5, noise_sigma=DETECTION_NOISE, seed=seed)
        d = wd / f"golden-{run}"
        d.mkdir(exist_ok=True)
        recs = simulate(persona, corpus, make_profiles("Type1", per_location=4), d / "serp.jsonl",
                        queries=_mixed_queries(corpus, 6))
        pairs = pipeline_pairs(recs, seed)
        means = group_means(pairs, seed=seed, resamples=500)
        paths, _ = emit_chart(ReportSpec((), Figure.FIG2_PANEL, str(d)),
                              [grouped_panel("golden", means, run_figure2_tests(pairs))])
        digests.append([_sha(d / "serp.jsonl")] + [_sha(p) for p in paths])
    ok = digests[0] == digests[1]
    return CheckResult("format golden", ok, f"log and chart digests identical={ok}",
                       {"digests": digests})


SCENARIOS = {
    "null": null_fidelity,
    "detection": detection,
    "specific-gap": specific_gap,
    "history": history_effect,
    "leaning": leaning_pipeline,
    "golden": golden_formats,
}


def run_all(seed: int = 7, workdir=None, only: Sequence[str] | None = None) -> list[CheckResult]:
    wd = _workdir(workdir)
    out = []
    for name, fn in SCENARIOS.items():
        if only and name not in only:
            continue
        res = fn(seed=seed, workdir=wd / name)
        log.info(res.line())
        out.append(res)
    return out
