"""From SERP logs to bot-pair comparisons and grouped statistics."""

from __future__ import annotations

import enum
import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from itertools import combinations
from math import comb
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import metrics
from .crawler import stable_rng
from .model import (
    BotType,
    ComparisonRecord,
    DataError,
    HistoryKind,
    Metric,
    MetricConfig,
    QueryCategory,
    SerpRecord,
    Status,
)
from .stats import (
    BootstrapCI,
    StatResult,
    anova_oneway,
    bonferroni,
    bootstrap_ci,
    mann_whitney_u,
    untestable,
)

log = logging.getLogger(__name__)

TOP_K = 10
FIG2_FAMILY = 12
CROSS_TYPE_FAMILY = 36


class Grouping(str, enum.Enum):
    SAME = "SameLocation"
    DIFF = "DiffLocation"


def grouping_of(rec: ComparisonRecord) -> Grouping:
    return Grouping.SAME if rec.same_location else Grouping.DIFF


@dataclass(frozen=True)
class PairingSpec:
    grouping: Grouping | None = None          # None keeps both groupings
    bot_type: BotType | None = None
    query_category: QueryCategory | None = None
    metric: Metric = Metric.DRBO
    category_mode: bool = False
    max_distinct_categories: int = 4
    word_count_range: tuple[int, int] | None = None
    history_kinds: frozenset | None = None
    type3_subset_only: bool = False


def compare(S: Sequence, T: Sequence, metric: Metric, cfg: MetricConfig = MetricConfig()) -> float:
    metric = Metric(metric)
    if metric in (Metric.DRBO, Metric.DRBO_CATEGORY):
        return metrics.d_metric(S, T, cfg)
    if metric is Metric.EDIT_DISTANCE:
        return float(metrics.edit_distance(S, T))
    if metric is Metric.SYMDIFF10:
        return float(metrics.symdiff_top_k(S, T, cfg.top_k_symdiff))
    if metric is Metric.COMMON_TOP3:
        return float(metrics.common_top_k(S, T, cfg.top_k_common))
    raise ValueError(f"unsupported metric {metric}")


def _eligible(r: SerpRecord, spec: PairingSpec) -> bool:
    if r.status is not Status.OK:
        return False
    if spec.bot_type is not None and r.bot_type is not BotType(spec.bot_type):
        return False
    if spec.query_category is not None and r.query.category is not QueryCategory(spec.query_category):
        return False
    if spec.history_kinds is not None and r.history_kind not in spec.history_kinds:
        return False
    if spec.type3_subset_only and not r.query.in_type3_subset:
        return False
    if spec.word_count_range is not None:
        lo, hi = spec.word_count_range
        if not lo <= r.query.word_count <= hi:
            return False
    return True


def serp_groups(records: Iterable[SerpRecord]) -> dict[tuple, list[SerpRecord]]:
    """Records keyed by (audit_id, engine, query text); one record per bot.

    A bot's first successful attempt wins over earlier failed ones.
    """
    groups: dict[tuple, dict[str, SerpRecord]] = defaultdict(dict)
    for r in records:
        g = groups[(r.audit_id, r.engine, r.query.text)]
        cur = g.get(r.bot_id)
        if cur is None or (cur.status is not Status.OK and r.status is Status.OK):
            g[r.bot_id] = r
    return {k: [v[b] for b in sorted(v)] for k, v in sorted(groups.items())}


def make_pairs(records: Iterable[SerpRecord], spec: PairingSpec = PairingSpec(),
               catmap: Mapping | None = None, cfg: MetricConfig = MetricConfig(),
               notes: list | None = None) -> list[ComparisonRecord]:
    """All unordered bot pairs per (audit, engine, query) under ``spec``.

    Lists are cut to the top 10 before any metric. In category mode each list
    becomes an occurrence-indexed category sequence, and queries where any
    page shows more than ``max_distinct_categories`` categories are skipped.
    """
    if spec.category_mode and catmap is None:
        raise ValueError("category mode needs a category map")
    metric = Metric(spec.metric)
    if spec.category_mode and metric is Metric.DRBO:
        metric = Metric.DRBO_CATEGORY
    notes = notes if notes is not None else []
    out: list[ComparisonRecord] = []
    for (audit_id, engine, qtext), recs in serp_groups(records).items():
        recs = [r for r in recs if _eligible(r, spec)]
        if len(recs) < 2:
            notes.append(f"{audit_id} {engine} {qtext!r}: fewer than 2 eligible bots, skipped")
            continue
        if spec.category_mode:
            seqs = {r.bot_id: metrics.to_category_sequence(r.results[:TOP_K], catmap) for r in recs}
            widest = max(metrics.distinct_categories(s) for s in seqs.values())
            if widest > spec.max_distinct_categories:
                notes.append(f"{audit_id} {engine} {qtext!r}: {widest} categories, skipped")
                continue
        else:
            seqs = {r.bot_id: r.urls[:TOP_K] for r in recs}
        n_same = n_diff = 0
        for a, b in combinations(recs, 2):
            same = a.location == b.location
            if spec.grouping is not None and same != (Grouping(spec.grouping) is Grouping.SAME):
                continue
            n_same += same
            n_diff += not same
            out.append(ComparisonRecord(
                audit_id=audit_id, engine=engine, query=a.query, bot_a=a.bot_id, bot_b=b.bot_id,
                same_location=same, metric=metric,
                value=compare(seqs[a.bot_id], seqs[b.bot_id], metric, cfg),
                bot_type=a.bot_type,
            ))
        per_loc = defaultdict(int)
        for r in recs:
            per_loc[r.location] += 1
        counts = list(per_loc.values())
        if spec.grouping in (None, Grouping.SAME):
            assert n_same == sum(comb(c, 2) for c in counts)
        if spec.grouping in (None, Grouping.DIFF):
            assert n_diff == sum(x * y for x, y in combinations(counts, 2))
    return out


def _values(records: Iterable[ComparisonRecord], **match) -> list[float]:
    out = []
    for r in records:
        if "engine" in match and r.engine != match["engine"]:
            continue
        if "grouping" in match and grouping_of(r) is not match["grouping"]:
            continue
        if "category" in match and r.query.category is not match["category"]:
            continue
        out.append(r.value)
    return out


def group_means(records: Sequence[ComparisonRecord], seed: int = 0, resamples: int = 10_000,
                aggregate: str = "pairs", notes: list | None = None) -> dict[tuple, BootstrapCI]:
    """Mean value with a bootstrap CI per (engine, grouping, query category).

    ``aggregate="pairs"`` treats every bot pair as one observation;
    ``"query"`` first averages the pairs of each query.
    """
    if aggregate not in ("pairs", "query"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    cells = defaultdict(list)
    if aggregate == "query":
        buckets = defaultdict(list)
        for r in records:
            key = (r.engine, grouping_of(r), r.query.category)
            buckets[key + (r.audit_id, r.query.text)].append(r.value)
        for k, vals in sorted(buckets.items(), key=lambda kv: repr(kv[0])):
            cells[k[:3]].append(float(np.mean(vals)))
    else:
        for r in records:
            cells[(r.engine, grouping_of(r), r.query.category)].append(r.value)
    out = {}
    for key in sorted(cells, key=lambda k: (k[0], k[1].value, k[2].value)):
        vals = cells[key]
        if not vals:
            if notes is not None:
                notes.append(f"{key}: empty cell omitted")
            continue
        out[key] = bootstrap_ci(vals, resamples=resamples, seed=seed)
    return out


FIG2_COMPARISONS = (
    ("Same Location vs. Diff Location - General Queries",
     dict(grouping=Grouping.SAME, category=QueryCategory.GENERAL),
     dict(grouping=Grouping.DIFF, category=QueryCategory.GENERAL)),
    ("Same Location vs. Diff Location - Specific Queries",
     dict(grouping=Grouping.SAME, category=QueryCategory.SPECIFIC),
     dict(grouping=Grouping.DIFF, category=QueryCategory.SPECIFIC)),
    ("General vs. Specific - Same Location",
     dict(grouping=Grouping.SAME, category=QueryCategory.GENERAL),
     dict(grouping=Grouping.SAME, category=QueryCategory.SPECIFIC)),
    ("General vs. Specific - Diff Location",
     dict(grouping=Grouping.DIFF, category=QueryCategory.GENERAL),
     dict(grouping=Grouping.DIFF, category=QueryCategory.SPECIFIC)),
)


def _mwu_or_untestable(a, b, labels, mode, **context) -> StatResult:
    if not a or not b:
        return untestable("MannWhitneyU", labels, **context)
    return replace(mann_whitney_u(a, b, mode=mode, labels=labels), **context)


def run_figure2_tests(records: Sequence[ComparisonRecord], family_size: int = FIG2_FAMILY,
                      mode: str = "auto", engines: Sequence[str] | None = None) -> list[StatResult]:
    """Four Mann-Whitney comparisons per engine, Bonferroni over a fixed family.

    Missing cells give untestable results; they still count toward the family.
    """
    engines = sorted(engines or {r.engine for r in records})
    results = []
    for engine in engines:
        for name, left, right in FIG2_COMPARISONS:
            a = _values(records, engine=engine, **left)
            b = _values(records, engine=engine, **right)
            labels = (f"{left['grouping'].value}/{left['category'].value}",
                      f"{right['grouping'].value}/{right['category'].value}")
            results.append(_mwu_or_untestable(a, b, labels, mode, engine=engine,
                                              comparison=name))
    return bonferroni(results, max(family_size, len(results)))


TYPE_PAIRS = ((BotType.TYPE1, BotType.TYPE2), (BotType.TYPE1, BotType.TYPE3),
              (BotType.TYPE2, BotType.TYPE3))


def run_cross_type_tests(records_by_type: Mapping, family_size: int = CROSS_TYPE_FAMILY,
                         mode: str = "auto", type3_subset_only: bool = True,
                         type_pairs=TYPE_PAIRS) -> list[StatResult]:
    """Type-vs-type comparisons per (engine, query category, grouping)."""
    by_type = {BotType(t): [r for r in recs if r.query.in_type3_subset or not type3_subset_only]
               for t, recs in records_by_type.items()}
    engines = sorted({r.engine for recs in by_type.values() for r in recs})
    results = []
    for engine in engines:
        for cat in QueryCategory:
            for grouping in (Grouping.DIFF, Grouping.SAME):
                for ta, tb in type_pairs:
                    match = dict(engine=engine, grouping=grouping, category=cat)
                    a = _values(by_type.get(BotType(ta), ()), **match)
                    b = _values(by_type.get(BotType(tb), ()), **match)
                    name = f"{BotType(ta).value} vs. {BotType(tb).value} - {grouping.value}"
                    results.append(_mwu_or_untestable(
                        a, b, (BotType(ta).value, BotType(tb).value), mode,
                        engine=engine, query_category=cat.value, comparison=name))
    return bonferroni(results, max(family_size, len(results)))


HISTORY_GROUPS = (
    ("conflict v. stat.", HistoryKind.CONFLICT_NEWS),
    ("general v. stat.", HistoryKind.GENERAL_NEWS),
    ("stateless v. stat.", HistoryKind.STATELESS),
)


def history_pair_values(records: Iterable[SerpRecord], cfg: MetricConfig = MetricConfig()
                        ) -> dict[tuple, dict[str, list[float]]]:
    """Same-location D values of each history kind against stateless bots.

    Keyed by (engine, query category), then by comparison label.
    """
    out: dict[tuple, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for (_, engine, _), recs in serp_groups(records).items():
        recs = [r for r in recs if r.status is Status.OK and r.bot_type is BotType.TYPE3]
        if not recs:
            continue
        cat = recs[0].query.category
        for a, b in combinations(recs, 2):
            if a.location != b.location:
                continue
            kinds = {a.history_kind, b.history_kind}
            if HistoryKind.STATELESS not in kinds:
                continue
            other = (kinds - {HistoryKind.STATELESS}) or {HistoryKind.STATELESS}
            label = next(lbl for lbl, k in HISTORY_GROUPS if k in other)
            out[(engine, cat)][label].append(
                metrics.d_metric(a.urls[:TOP_K], b.urls[:TOP_K], cfg))
    return out


def run_history_anova(records: Iterable[SerpRecord], cfg: MetricConfig = MetricConfig()
                      ) -> list[StatResult]:
    """One-way ANOVA of the three history-vs-stateless D groups per (engine, category)."""
    results = []
    values = history_pair_values(records, cfg)
    if not values:
        raise DataError("no Type3 records to compare")
    for (engine, cat) in sorted(values, key=lambda k: (k[0], k[1].value)):
        groups = values[(engine, cat)]
        missing = [lbl for lbl, _ in HISTORY_GROUPS if len(groups.get(lbl, ())) < 2]
        if missing:
            raise DataError(f"{engine}/{cat.value}: missing comparison group(s) {missing}")
        labels = [lbl for lbl, _ in HISTORY_GROUPS]
        res = anova_oneway([groups[lbl] for lbl in labels], labels=labels)
        results.append(replace(res, engine=engine, query_category=cat.value,
                               comparison="history vs stateless"))
    return results


def length_control(records: Sequence[ComparisonRecord], lo: int = 3, hi: int = 8, seed: int = 0,
                   resamples: int = 10_000) -> dict[tuple, BootstrapCI]:
    """Group means restricted to lo..hi-word queries with equal query counts per category."""
    kept = [r for r in records if lo <= r.query.word_count <= hi]
    out = []
    for engine in sorted({r.engine for r in kept}):
        recs = [r for r in kept if r.engine == engine]
        by_cat = {c: sorted({r.query.text for r in recs if r.query.category is c})
                  for c in QueryCategory}
        n = min(len(v) for v in by_cat.values())
        if n == 0:
            continue
        rng = stable_rng("length-control", seed, engine)
        chosen = set()
        for c in QueryCategory:
            texts = by_cat[c]
            chosen.update(texts[i] for i in sorted(rng.choice(len(texts), size=n, replace=False)))
        out.extend(r for r in recs if r.query.text in chosen)
    if not out:
        raise DataError(f"no queries of both categories with {lo}..{hi} words")
    return group_means(out, seed=seed, resamples=resamples)


@dataclass(frozen=True)
class TimeControlResult:
    epoch_means: tuple[dict, ...]       # per epoch: (grouping, category) -> BootstrapCI
    slopes: dict                        # (grouping, category) -> slope of means per epoch

    def gap(self, epoch: int, category: QueryCategory) -> float:
        m = self.epoch_means[epoch]
        return m[(Grouping.DIFF, category)].mean - m[(Grouping.SAME, category)].mean


def _plan_signature(records: Sequence[SerpRecord]) -> set:
    return {(r.engine, r.query.text, r.bot_id) for r in records}


def time_control(logs: Sequence[Sequence[SerpRecord]], cfg: MetricConfig = MetricConfig(),
                 seed: int = 0, resamples: int = 10_000,
                 spec: PairingSpec = PairingSpec()) -> TimeControlResult:
    """Same/different-location means for the same plan run at several epochs."""
    if len(logs) < 2:
        raise ValueError("time control needs at least two epochs")
    sig = _plan_signature(logs[0])
    for i, lg in enumerate(logs[1:], start=1):
        if _plan_signature(lg) != sig:
            raise DataError(f"epoch {i} log was not produced by the same plan as epoch 0")
    per_epoch = []
    for lg in logs:
        pairs = make_pairs(lg, spec, cfg=cfg)
        cells = defaultdict(list)
        for r in pairs:
            cells[(grouping_of(r), r.query.category)].append(r.value)
        per_epoch.append({k: bootstrap_ci(v, resamples=resamples, seed=seed)
                          for k, v in sorted(cells.items(), key=lambda kv: (kv[0][0].value, kv[0][1].value))})
    slopes = {}
    for key in per_epoch[0]:
        ys = [m[key].mean for m in per_epoch if key in m]
        xs = np.arange(len(ys), dtype=float)
        slopes[key] = float(np.polyfit(xs, ys, 1)[0]) if len(ys) >= 2 else float("nan")
    return TimeControlResult(tuple(per_epoch), slopes)
