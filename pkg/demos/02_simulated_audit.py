"""
A full audit against the simulated engine
=========================================

The simulator ranks a seeded document pool with a location weight we
choose, so we know what the pipeline should find. We run one audit,
filter and balance it, pair the pages and test the groupings.
"""

import tempfile
from pathlib import Path

from serpaudit.analyze import group_means, make_pairs, run_figure2_tests
from serpaudit.crawler import AuditPlan, balance, make_profiles, run_audit, success_filter
from serpaudit.model import read_serp_log
from serpaudit.report import Figure, ReportSpec, emit_chart, grouped_panel
from serpaudit.simengine import EnginePersona, SimClient, SimCorpus, SimEngine

work = Path(tempfile.mkdtemp(prefix="serpaudit-demo-"))

corpus = SimCorpus(seed=3)
persona = EnginePersona(w_loc=0.5, noise_sigma=0.1, seed=3)
profiles = make_profiles("Type1", per_location=4)     # 4 bots in each of 4 locations

plan = AuditPlan("demo", [persona.name], corpus.queries, profiles)
run_audit(plan, [SimClient(SimEngine(persona, corpus))], work / "serp.jsonl")
records = list(read_serp_log(work / "serp.jsonl"))
print(len(records), "SERPs logged")

# keep cells with enough distinct IPs, then even out categories and bots
kept, excluded = success_filter(records)
balanced = balance(kept, seed=3)
pairs = make_pairs(balanced)
print(len(pairs), "pairwise comparisons,", len(excluded), "cells excluded")

# bootstrap means per grouping and the four Mann-Whitney comparisons
means = group_means(pairs, seed=3, resamples=2000)
for key, ci in sorted(means.items(), key=str):
    print(key[1].value, key[2].value, f"{ci.mean:.3f} [{ci.lo:.3f}, {ci.hi:.3f}]")
tests = run_figure2_tests(pairs)
for t in tests:
    print(f"{t.comparison:<55} p_adj={t.p_adjusted:.3g} {t.stars.value}")

paths, warnings = emit_chart(ReportSpec((), Figure.FIG2_PANEL, str(work)),
                             [grouped_panel("Simulated engine", means, tests)])
print("chart:", *paths)
