import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from serpaudit import annotate as ann
from serpaudit.annotate import (
    UNRESOLVED,
    AnnotatorError,
    CategoryMap,
    CategorySource,
    CoderKind,
    LeaningLabel,
    Scope,
)
from serpaudit.model import CATEGORY_VOCABULARY, DataError, Leaning
from serpaudit.simengine import SimCorpus, render_page

from helpers import serp

P, SP, N, SPP, PP = list(Leaning)


class FixedAnnotator(ann.Annotator):
    def __init__(self, answers, fail=()):
        self.answers, self.fail, self.calls = answers, set(fail), 0

    def label(self, prompt, text):
        self.calls += 1
        if text in self.fail:
            raise ConnectionError("down")
        return self.answers[text]


def test_prompts_bundled():
    assert "News" in ann.load_prompt("category")
    assert "ProIsrael" in ann.load_prompt("leaning")


def test_override_beats_annotator(tmp_path):
    ov = tmp_path / "ov.csv"
    ov.write_text("domain,category\nexample.com,News\n")
    cmap = ann.categorize_domains(["example.com", "b.org"],
                                  FixedAnnotator({"example.com": "Entertainment", "b.org": "Science"}),
                                  overrides_path=ov, workers=1)
    assert cmap["example.com"] == ("News", CategorySource.MANUAL_VERIFIED)
    assert cmap["b.org"] == ("Science", CategorySource.AUTO)


def test_cache_makes_second_run_free(tmp_path):
    a = FixedAnnotator({"x.com": "News", "y.com": "Art"})
    first = ann.categorize_domains(["x.com", "y.com"], a, cache_dir=tmp_path / "c")
    assert a.calls == 2
    b = FixedAnnotator({})
    second = ann.categorize_domains(["y.com", "x.com"], b, cache_dir=tmp_path / "c")
    assert b.calls == 0 and second == first
    assert len(list((tmp_path / "c").glob("*.json"))) == 2
    # a different prompt is a different cache key
    c = FixedAnnotator({"x.com": "News"})
    ann.categorize_domains(["x.com"], c, cache_dir=tmp_path / "c", prompt="other")
    assert c.calls == 1


def test_annotator_errors(tmp_path):
    with pytest.raises(AnnotatorError) as ei:
        ann.categorize_domains(["a.com", "b.com"], FixedAnnotator({"a.com": "News"}, fail={"b.com"}))
    assert "b.com" in str(ei.value)
    with pytest.raises(AnnotatorError) as ei:
        ann.categorize_domains(["a.com"], FixedAnnotator({"a.com": "Gossip"}))
    assert "'Gossip'" in str(ei.value)
    with pytest.raises(AnnotatorError):
        ann.categorize_domains(["a.com"], None)


def test_stub_recovers_simulator_categories():
    corpus = SimCorpus(seed=2, pool_size=50)
    truth = corpus.categories()
    cmap = ann.categorize_domains(truth, ann.StubCategoryAnnotator())
    hits = np.mean([cmap.category(d) == c for d, c in truth.items()])
    assert hits >= 0.95
    assert set(cmap.plain().values()) <= set(CATEGORY_VOCABULARY)


def test_category_map_rules_and_csv(tmp_path):
    m = CategoryMap()
    m.set("a.com", "News", CategorySource.MANUAL_VERIFIED)
    m.set("a.com", "Art")
    assert m.category("a.com") == "News"
    with pytest.raises(AnnotatorError):
        m.set("b.com", "Nonsense")
    m.set("b.com", "Art")
    m.save(tmp_path / "m.csv")
    assert CategoryMap.load(tmp_path / "m.csv") == m


class _Labeller(BaseHTTPRequestHandler):
    hits = 0

    def log_message(self, *a):
        pass

    def do_POST(self):  # noqa: N802
        type(self).hits += 1
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        if type(self).hits == 1:
            self.send_response(500)
            self.end_headers()
            return
        out = json.dumps({"label": "News" if "news" in body["text"] else "Art"}).encode()
        self.send_response(200)
        self.send_header("Content-Length", str(len(out)))
        self.end_headers()
        self.wfile.write(out)


def test_http_annotator_retries():
    srv = ThreadingHTTPServer(("127.0.0.1", 0), _Labeller)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    try:
        a = ann.HttpAnnotator(f"http://127.0.0.1:{srv.server_address[1]}/", retries=2, backoff_s=0)
        assert a.label("p", "dailynews.com") == "News"
        assert a.calls == 2
    finally:
        srv.shutdown()
        srv.server_close()
    dead = ann.HttpAnnotator("http://127.0.0.1:9/", retries=1, backoff_s=0, timeout=0.5)
    with pytest.raises(AnnotatorError):
        dead.label("p", "x")


def test_prepare_article():
    raw = ("<html><head><title>Big story - ynet</title></head><body><nav>menu ynet.co.il</nav>"
           "<script>var x;</script><article><p>Text from www.ynet.co.il about events.</p></article>"
           "<footer>(c) ynet</footer></body></html>")
    out = ann.prepare_article("https://www.ynet.co.il/a/1", raw)
    title, body = out.split("\n\n")
    assert title == "Big story"
    assert "ynet" not in out.lower() and "menu" not in out and "var x" not in out
    assert body.startswith("Text from about events")
    assert ann.prepare_article("https://a.com/", "<p>hi</p>", translate=str.upper) == "HI"
    with pytest.raises(DataError):
        ann.prepare_article("https://a.com/", "<html><nav>only chrome</nav></html>")


def test_prepare_and_stub_leaning_on_simulated_pages():
    corpus = SimCorpus(seed=4, pool_size=40)
    news = [d for d in corpus.docs.values() if d.leaning is not None][:60]
    stub = ann.StubLeaningAnnotator()
    for d in news:
        text = ann.prepare_article(d.url, render_page(d))
        assert d.domain not in text
        assert stub.label("", text) == d.leaning.value


def test_consensus_rules():
    labels = [LeaningLabel("u1", "h1", P), LeaningLabel("u1", "h2", P),
              LeaningLabel("u2", "h1", P), LeaningLabel("u2", "h2", SP),
              LeaningLabel("u3", "h1", N),
              LeaningLabel("u4", "m", PP, CoderKind.MACHINE), LeaningLabel("u4", "h1", PP)]
    res = ann.consensus(labels)
    assert res == {"u1": P, "u2": UNRESOLVED, "u3": UNRESOLVED, "u4": UNRESOLVED}
    collapsed = ann.consensus(labels, collapse=True)
    assert collapsed["u2"] == P
    with pytest.raises(DataError):
        ann.consensus(labels + [LeaningLabel("u1", "h1", N)])


label_st = st.builds(LeaningLabel, st.sampled_from(["u1", "u2", "u3"]),
                     st.sampled_from(["h1", "h2", "h3", "h4"]), st.sampled_from(list(Leaning)))


@given(st.lists(label_st, max_size=12, unique_by=lambda l: (l.url, l.coder_id)), st.randoms())
def test_consensus_order_invariant(labels, rnd):
    shuffled = list(labels)
    rnd.shuffle(shuffled)
    assert ann.consensus(labels) == ann.consensus(shuffled)
    assert ann.consensus(labels, collapse=True) == ann.consensus(shuffled, collapse=True)


def test_load_labels_drops_failed_attention(tmp_path):
    f = tmp_path / "l.csv"
    f.write_text("url,coder_id,label,survey_id,attention_pass\n"
                 "u,a,Neutral,s,true\nu,b,Neutral,s,false\nu,c,ProIsrael,s,1\n")
    labels = ann.load_labels(f)
    assert [l.coder_id for l in labels] == ["a", "c"]
    f.write_text("url,coder_id,label\nu,a,Neutral\nu,a,Neutral\n")
    with pytest.raises(DataError):
        ann.load_labels(f)
    f.write_text("url,coder_id,label\nu,a,Biased\n")
    with pytest.raises(DataError):
        ann.load_labels(f)


def _news_records():
    u = [f"https://www.news{i}.com/a" for i in range(1, 6)]
    cmap = {f"news{i}.com": "News" for i in range(1, 6)}
    cmap["fun.com"] = "Entertainment"
    return [serp("b1", "IL", u[:2] + ["https://fun.com/x"] + u[2:]),
            serp("b2", "IL", u[::-1]), serp("b3", "SA", u)], cmap, u


def test_leaning_proportions():
    recs, cmap, u = _news_records()
    all_neutral = {x: N for x in u}
    cells = ann.leaning_proportions(recs, all_neutral, cmap, Scope.ALL)
    assert cells[("e", "IL")].proportions == (0.0, 0.0, 1.0, 0.0, 0.0)
    mixed = {u[0]: P, u[1]: P, u[2]: SPP, u[3]: UNRESOLVED, u[4]: N}
    a = ann.leaning_proportions(recs, mixed, cmap, "All")
    t = ann.leaning_proportions(recs, mixed, cmap, "Top3")
    for key in a:
        assert abs(sum(a[key].proportions) - 1) <= 1e-9
        assert a[key].n >= t[key].n
    assert t[("e", "SA")].counts == (2, 0, 0, 1, 0)
    notes = []
    assert ann.leaning_proportions(recs, {}, cmap, notes=notes) == {} and len(notes) == 2


def test_agreement_matrix():
    labs = [LeaningLabel(f"u{i}", "m", lab, CoderKind.MACHINE) for i, lab in enumerate(Leaning)]
    same = {f"u{i}": lab for i, lab in enumerate(Leaning)}
    assert np.array_equal(ann.agreement_matrix(labs, same), np.eye(5))
    humans = [LeaningLabel("u0", "h1", P), LeaningLabel("u0", "h2", SP)]
    m = ann.agreement_matrix(labs, humans)
    assert m[0, 0] == m[0, 1] == 0.5
    assert np.allclose(m.sum(axis=1)[m.sum(axis=1) > 0], 1)
    with pytest.raises(DataError):
        ann.agreement_matrix(labs, {"zzz": P})


def test_machine_labels_stay_separate():
    m = ann.machine_labels([("u1", "condemned the siege and mourned palestinian lives")],
                           ann.StubLeaningAnnotator())
    assert m[0].coder_kind is CoderKind.MACHINE and m[0].label is PP
    assert ann.consensus(m) == {"u1": UNRESOLVED}
