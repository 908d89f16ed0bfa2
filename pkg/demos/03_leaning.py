"""
News categories and leaning shares
==================================

Domains get categories from an annotator (the offline stub here). News
articles get leaning labels from human coders; only exact agreement counts.
The shares are then compared between all results and the top three.
"""

import tempfile
from pathlib import Path

from serpaudit import annotate as ann
from serpaudit.crawler import make_profiles
from serpaudit.model import Leaning, QueryCategory
from serpaudit.simengine import EnginePersona, SimCorpus, SimEngine
from serpaudit.validation import coder_fixtures, simulate

work = Path(tempfile.mkdtemp(prefix="serpaudit-leaning-"))
corpus = SimCorpus(seed=11)
# pro-Israel news gets a bonus in IL
persona = EnginePersona(leaning_bias=(("IL", Leaning.PRO_ISRAEL.value, 0.2),),
                        noise_sigma=0.1, seed=11)
queries = [q for q in corpus.queries if q.category is QueryCategory.SPECIFIC]
records = simulate(persona, corpus, make_profiles("Type1", per_location=3),
                   work / "serp.jsonl", queries=queries)

catmap = ann.categorize_domains(ann.domains_in(records), ann.StubCategoryAnnotator())
print(len(catmap), "domains categorized")

# simulated coders: two per article, every tenth pair disagrees
engine = SimEngine(persona, corpus)
truth = {u: Leaning(engine.truth(corpus.by_url[u].doc_id)["leaning"])
         for u in ann.iter_news_urls(records, catmap)}
labels, disagree = coder_fixtures(truth, seed=11)
resolved = ann.consensus(labels)
print(sum(v == ann.UNRESOLVED for v in resolved.values()), "articles left unresolved")

everything = ann.leaning_proportions(records, resolved, catmap, ann.Scope.ALL)
top3 = ann.leaning_proportions(records, resolved, catmap, ann.Scope.TOP3)
for key in sorted(everything):
    a, t = everything[key].proportions[0], top3[key].proportions[0]
    print(key[1], f"pro-Israel share: all {a:.2f}, top 3 {t:.2f}")
