"""Deterministic simulated search engine with tunable personalization.

Scores are linear in the request's location, language and browsing-history
affinities, so an injected effect has a known size. The same engine object
backs the in-process :class:`SimClient` and the HTTP service.
"""

from __future__ import annotations

import csv
import hashlib
import html
import json
import logging
import re
import threading
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Mapping, Sequence

import numpy as np

from .crawler import (
    CONFLICT_KEYWORDS,
    GENERAL_KEYWORDS,
    CaptchaError,
    EngineClient,
    ParseError,
    Session,
    stable_rng,
)
from .model import (
    GENERAL_CATEGORIES,
    LOCATIONS,
    SPECIFIC_CATEGORIES,
    BotProfile,
    Leaning,
    Query,
    QueryCategory,
    RankedResult,
    SerpRecord,
    Status,
    load_queries,
)

log = logging.getLogger(__name__)

SERP_SIZE = 10
EPOCH_DRIFT = 0.15
TRACK_HOST = "track.sim.test"
DOMAINS_PER_CELL = 6


def _slug(text: str) -> str:
    return re.sub(r"[^a-z0-9]+", "-", text.casefold()).strip("-")


def topic_key(kind: str, keyword: str) -> str:
    return f"{kind}.{_slug(keyword)}"


TOPICS: tuple[str, ...] = tuple(
    [topic_key("conflict", k) for k in CONFLICT_KEYWORDS]
    + [topic_key("general", k) for k in GENERAL_KEYWORDS]
)

CATEGORY_STEMS = {
    "Reference": "wiki", "Entertainment": "fun", "Education": "learn",
    "Technology": "tech", "News": "news", "Lifestyle": "living", "Business": "biz",
    "Finance": "money", "Health": "health", "Government": "gov", "Non-Profit": "ngo",
    "Social Media": "social", "Travel": "travel", "E-Commerce": "shop", "Art": "art",
    "Science": "science", "Fashion": "style", "Legal": "law", "Career": "jobs",
    "Retail": "store", "Automotive": "auto", "Food": "food", "Fact-Checking": "factcheck",
    "Religion": "faith", "Sports": "sports",
}

_TLD = {"IL": "co.il", "SA": "com.sa", "BR": "com.br", "US_NY": "com"}


def _mixture(head: dict[str, float], vocab: Sequence[str]) -> tuple[list[str], np.ndarray]:
    rest = [c for c in vocab if c not in head]
    share = (1.0 - sum(head.values())) / len(rest)
    cats = list(head) + rest
    probs = np.array(list(head.values()) + [share] * len(rest))
    return cats, probs / probs.sum()


# target category mix of result pools per query category
POOL_MIX = {
    QueryCategory.SPECIFIC: _mixture({"News": 0.83, "Reference": 0.07, "Education": 0.03},
                                     SPECIFIC_CATEGORIES),
    QueryCategory.GENERAL: _mixture({"Lifestyle": 0.26, "Health": 0.18, "Entertainment": 0.13},
                                    GENERAL_CATEGORIES),
}

LEANING_MIX = np.array([0.2, 0.15, 0.3, 0.15, 0.2])

_LEANING_LINES = {
    Leaning.PRO_ISRAEL: "Officials stressed the right of Israeli families to live without rocket fire.",
    Leaning.SLIGHTLY_PRO_ISRAEL: "Analysts noted Israeli security concerns while urging restraint.",
    Leaning.NEUTRAL: "Both sides issued statements and the report lists the known facts.",
    Leaning.SLIGHTLY_PRO_PALESTINE: "Aid workers described hardship for Palestinian civilians in Gaza.",
    Leaning.PRO_PALESTINE: "Residents condemned the siege and mourned Palestinian lives lost.",
}


def domain_for(category: str, location: str, i: int) -> str:
    return f"{CATEGORY_STEMS[category]}{location.lower().replace('_', '')}{i}.{_TLD.get(location, 'com')}"


@dataclass(frozen=True)
class EnginePersona:
    name: str = "simengine"
    w_loc: float = 0.0
    w_lang: float = 0.0
    w_hist: float = 0.0
    specific_affinity_boost: float = 0.0
    noise_sigma: float = 0.0
    epoch: int = 0
    seed: int = 0
    # (location, leaning, score bonus) triples
    leaning_bias: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self):
        for name in ("w_loc", "w_lang", "w_hist", "specific_affinity_boost", "noise_sigma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")
        object.__setattr__(self, "leaning_bias",
                           tuple((l, Leaning(s).value, float(b)) for l, s, b in self.leaning_bias))


@dataclass(frozen=True)
class SynthDoc:
    doc_id: str
    url: str
    domain: str
    category: str
    loc_affinity: Mapping[str, float]
    lang: str
    hist_affinity: Mapping[str, float]
    leaning: Leaning | None
    title: str
    base_relevance: float

    @property
    def body(self) -> str:
        return render_page(self)


@dataclass
class _Pool:
    query: Query
    docs: list[SynthDoc]
    base: np.ndarray
    loc_aff: np.ndarray       # docs x locations
    lang: np.ndarray          # docs, language tags
    hist_aff: np.ndarray      # docs x topics
    leaning: np.ndarray       # docs, index into Leaning or -1


class SimCorpus:
    """Result pools for every query, generated from the seed (no fixture files)."""

    def __init__(self, queries: Sequence[Query] | None = None, seed: int = 0,
                 pool_size: int = 200, locations: Sequence[str] | None = None):
        self.seed = seed
        self.pool_size = pool_size
        self.locations = tuple(locations or LOCATIONS)
        self.queries = list(queries if queries is not None else load_queries())
        self.pools: dict[str, _Pool] = {}
        self.docs: dict[str, SynthDoc] = {}
        self.by_url: dict[str, SynthDoc] = {}
        for qi, q in enumerate(self.queries):
            pool = self._generate(qi, q)
            self.pools[q.text] = pool
            for d in pool.docs:
                self.docs[d.doc_id] = d
                self.by_url[d.url] = d

    def _generate(self, qi: int, q: Query) -> _Pool:
        rng = stable_rng("corpus", self.seed, q.text)
        n, L = self.pool_size, len(self.locations)
        cats, probs = POOL_MIX[q.category]
        cat_idx = rng.choice(len(cats), size=n, p=probs)
        home = rng.integers(0, L, size=n)
        dom_i = rng.integers(0, DOMAINS_PER_CELL, size=n)
        base = rng.random(n)
        loc_aff = rng.uniform(0.0, 0.2, size=(n, L))
        loc_aff[np.arange(n), home] = 1.0
        local_lang = rng.random(n) < 0.7
        hist_aff = rng.random((n, len(TOPICS)))
        lean_draw = rng.choice(len(Leaning), size=n, p=LEANING_MIX)
        docs, langs, leaning = [], [], []
        for j in range(n):
            cat = cats[cat_idx[j]]
            loc = self.locations[home[j]]
            lang = LOCATIONS.get(loc, "en") if local_lang[j] else "en"
            lean = list(Leaning)[lean_draw[j]] if cat == "News" else None
            domain = domain_for(cat, loc, int(dom_i[j]))
            doc_id = f"{qi:03d}-{j:03d}"
            docs.append(SynthDoc(
                doc_id=doc_id,
                url=f"https://www.{domain}/{_slug(cat)}/{doc_id}",
                domain=domain,
                category=cat,
                loc_affinity=dict(zip(self.locations, map(float, loc_aff[j]))),
                lang=lang,
                hist_affinity=dict(zip(TOPICS, map(float, hist_aff[j]))),
                leaning=lean,
                title=f"{q.text} - {cat} story {j}",
                base_relevance=float(base[j]),
            ))
            langs.append(lang)
            leaning.append(list(Leaning).index(lean) if lean else -1)
        return _Pool(q, docs, base, loc_aff, np.array(langs), hist_aff, np.array(leaning))

    def categories(self) -> dict[str, str]:
        """Ground-truth domain -> category map."""
        return {d.domain: d.category for d in self.docs.values()}


def history_topics(cookies) -> np.ndarray:
    """Topic-exposure shares from a cookie jar (triples or a name->value mapping)."""
    values = cookies.values() if isinstance(cookies, Mapping) else [c[1] for c in cookies]
    counts = np.zeros(len(TOPICS))
    for v in values:
        if v in TOPICS:
            counts[TOPICS.index(v)] += 1
    total = counts.sum()
    return counts / total if total else counts


@dataclass(frozen=True)
class SimSerp:
    query_text: str
    docs: tuple[SynthDoc, ...]
    unknown_query: bool = False

    def results(self) -> list[RankedResult]:
        return [RankedResult(i, d.url, d.domain, d.title, snippet_for(d))
                for i, d in enumerate(self.docs, start=1)]


def snippet_for(doc: SynthDoc) -> str:
    return f"{doc.category} coverage from {doc.domain}"


def render_page(doc: SynthDoc) -> str:
    rng = stable_rng("page", doc.doc_id)
    filler = ["The piece was updated later in the day.",
              "Readers shared the story widely.",
              "Further details are expected."]
    lines = [f"{doc.title}." ]
    if doc.leaning is not None:
        lines += [_LEANING_LINES[doc.leaning]] * 2
    lines += [filler[i] for i in rng.permutation(len(filler))]
    body = " ".join(lines)
    return (
        "<html><head><title>" + html.escape(doc.title) + "</title></head><body>"
        f"<nav>Home | {doc.domain} | Contact</nav>"
        f"<article><p>{html.escape(body)}</p><p>Read more on {doc.domain}.</p></article>"
        f"<footer>(c) {doc.domain}</footer></body></html>"
    )


class SimEngine:
    def __init__(self, persona: EnginePersona = EnginePersona(),
                 corpus: SimCorpus | None = None):
        self.persona = persona
        self.corpus = corpus or SimCorpus(seed=persona.seed)
        self._bias = {}
        for loc, lean, bonus in persona.leaning_bias:
            self._bias.setdefault(loc, np.zeros(len(Leaning)))
            self._bias[loc][list(Leaning).index(Leaning(lean))] += bonus

    # -- scoring --
    def _base(self, pool: _Pool) -> np.ndarray:
        ep = self.persona.epoch
        if ep == 0:
            return pool.base
        drift = stable_rng("epoch", self.corpus.seed, ep, pool.query.text).standard_normal(pool.base.size)
        return pool.base + EPOCH_DRIFT * drift

    def _noise(self, pool: _Pool, client_key: str) -> np.ndarray:
        ps = self.persona
        if ps.noise_sigma == 0:
            return np.zeros(pool.base.size)
        rng = stable_rng("noise", ps.seed, ps.epoch, pool.query.text, client_key)
        return ps.noise_sigma * rng.standard_normal(pool.base.size)

    def _scores(self, pool: _Pool, location: str, language: str, cookies, client_key: str):
        ps = self.persona
        s = self._base(pool).copy()
        if location in self.corpus.locations:
            aff = pool.loc_aff[:, self.corpus.locations.index(location)]
            w = ps.w_loc + (ps.specific_affinity_boost
                            if pool.query.category is QueryCategory.SPECIFIC else 0.0)
            s += w * aff
        s += ps.w_lang * (pool.lang == language)
        h = history_topics(cookies)
        if h.any():
            s += ps.w_hist * (pool.hist_aff @ h)
        if location in self._bias:
            lean_bonus = np.append(self._bias[location], 0.0)  # index -1 -> no leaning
            s += lean_bonus[pool.leaning]
        return s + self._noise(pool, client_key)

    def score(self, doc: SynthDoc, query: Query, location: str, language: str,
              cookies=(), client_key: str = "") -> float:
        pool = self.corpus.pools[query.text]
        j = int(doc.doc_id.split("-")[1])
        if pool.docs[j] is not doc and pool.docs[j].doc_id != doc.doc_id:
            raise KeyError(f"{doc.doc_id} is not in the pool of {query.text!r}")
        return float(self._scores(pool, location, language, cookies, client_key)[j])

    def serve_search(self, q: str, location: str, language: str, cookies=(),
                     client_key: str = "") -> SimSerp:
        pool = self.corpus.pools.get(q)
        if pool is None:
            return SimSerp(q, (), unknown_query=True)
        s = self._scores(pool, location, language, cookies, client_key)
        # score descending, doc_id (== pool index) ascending on ties
        order = np.lexsort((np.arange(s.size), -s))[:SERP_SIZE]
        return SimSerp(q, tuple(pool.docs[i] for i in order))

    def serve_track(self, kind: str, keyword: str, page: int = 0) -> tuple[str, tuple[str, str, str]]:
        topic = topic_key(kind, keyword)
        if topic not in TOPICS:
            raise KeyError(f"unknown tracking topic {topic}")
        cookie = (f"exp-{topic}-{page}", topic, TRACK_HOST)
        body = f"<html><body><p>{kind} news about {keyword}, page {page}.</p></body></html>"
        return body, cookie

    def serve_page(self, doc_id: str) -> str:
        return render_page(self.corpus.docs[doc_id])

    def truth(self, doc_id: str) -> dict:
        d = self.corpus.docs[doc_id]
        return {"doc_id": doc_id, "category": d.category,
                "leaning": d.leaning.value if d.leaning else None}


def write_url_list(path, base_url: str = f"http://{TRACK_HOST}", pages_per_keyword: int = 10,
                   locations: Sequence[str] | None = None) -> int:
    """Write a warm-up source file pointing at the engine's tracking pages."""
    rows = 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["url", "keyword", "location", "language"])
        for loc in locations or LOCATIONS:
            for kind, words in (("conflict", CONFLICT_KEYWORDS), ("general", GENERAL_KEYWORDS)):
                for kw in words:
                    for i in range(pages_per_keyword):
                        url = f"{base_url}/track/{kind}/{_slug(kw)}?page={i}&loc={loc}"
                        w.writerow([url, kw, loc, LOCATIONS[loc]])
                        rows += 1
    return rows


_TRACK_RE = re.compile(r"^/track/(conflict|general)/([a-z0-9-]+)$")


def _parse_track(url: str):
    parts = urllib.parse.urlsplit(url)
    m = _TRACK_RE.match(parts.path)
    if not m:
        return None
    qs = urllib.parse.parse_qs(parts.query)
    kind, slug = m.groups()
    words = CONFLICT_KEYWORDS if kind == "conflict" else GENERAL_KEYWORDS
    kw = next((k for k in words if _slug(k) == slug), slug)
    return kind, kw, int(qs.get("page", ["0"])[0]), parts.hostname or TRACK_HOST


class SimClient(EngineClient):
    """In-process client for :class:`SimEngine`.

    ``faults`` injects per-IP failures: ``"captcha"``, ``"timeout"``,
    ``"parse"`` or an integer cap on the number of results returned.
    """

    def __init__(self, engine: SimEngine, faults: Mapping[str, object] | None = None):
        self.engine = engine
        self.faults = dict(faults or {})

    def name(self) -> str:
        return self.engine.persona.name

    def _fault(self, profile: BotProfile):
        f = self.faults.get(profile.ip_label)
        if f == "captcha":
            raise CaptchaError(f"captcha for {profile.ip_label}")
        if f == "timeout":
            raise TimeoutError(f"timeout for {profile.ip_label}")
        if f == "parse":
            raise ParseError(f"unparseable page for {profile.ip_label}")
        return f if isinstance(f, int) else None

    def search(self, query: Query, profile: BotProfile, session: Session) -> SerpRecord:
        cap = self._fault(profile)
        serp = self.engine.serve_search(query.text, profile.location, profile.language,
                                        session.cookies, profile.ip_label)
        results = serp.results()[:cap] if cap is not None else serp.results()
        status = Status.OK if results else Status.PARSE_FAILURE
        return SerpRecord.for_profile(profile, audit_id=session.audit_id, engine=self.name(),
                                      query=query, timestamp_ms=session.timestamp_ms,
                                      results=tuple(results), status=status)

    def fetch_page(self, url: str, profile: BotProfile, session: Session) -> str:
        track = _parse_track(url)
        if track:
            kind, kw, page, host = track
            body, (name, value, _) = self.engine.serve_track(kind, kw, page)
            session.set_cookie(name, value, host)
            return body
        doc = self.engine.corpus.by_url.get(url)
        if doc is None:
            raise KeyError(f"404 {url}")
        return render_page(doc)


# --- HTTP service ------------------------------------------------------------------

def _parse_cookie_header(header: str) -> dict:
    out = {}
    for part in header.split(";"):
        if "=" in part:
            k, v = part.strip().split("=", 1)
            out[k] = v
    return out


class _Handler(BaseHTTPRequestHandler):
    server_version = "simengine/1"
    sys_version = ""

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.address_string(), *args)

    def _send(self, code: int, body: str, ctype: str = "application/json", headers=()):
        data = body.encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", f"{ctype}; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.send_header("X-Content-Hash", hashlib.sha256(data).hexdigest())
        for k, v in headers:
            self.send_header(k, v)
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):  # noqa: N802 - http.server API
        engine: SimEngine = self.server.engine
        parts = urllib.parse.urlsplit(self.path)
        qs = {k: v[0] for k, v in urllib.parse.parse_qs(parts.query).items()}
        path = parts.path
        if path == "/healthz":
            return self._send(200, "ok", "text/plain")
        if path == "/search":
            cookies = _parse_cookie_header(self.headers.get("Cookie", ""))
            serp = engine.serve_search(qs.get("q", ""), qs.get("loc", ""), qs.get("lang", ""),
                                       cookies, qs.get("ip", ""))
            body = json.dumps({"query": serp.query_text, "unknown_query": serp.unknown_query,
                               "results": [r.to_dict() for r in serp.results()]},
                              ensure_ascii=False, separators=(",", ":"))
            return self._send(200, body)
        if path.startswith("/page/"):
            doc_id = path[len("/page/"):]
            if doc_id not in engine.corpus.docs:
                return self._send(404, "not found", "text/plain")
            return self._send(200, engine.serve_page(doc_id), "text/html")
        m = _TRACK_RE.match(path)
        if m:
            kind, kw, page, _ = _parse_track(self.path)
            try:
                body, (name, value, _) = engine.serve_track(kind, kw, page)
            except KeyError:
                return self._send(404, "unknown topic", "text/plain")
            return self._send(200, body, "text/html",
                              [("Set-Cookie", f"{name}={value}; Path=/")])
        if path.startswith("/truth/"):
            if not self.server.allow_truth:
                return self._send(403, "truth endpoint disabled", "text/plain")
            doc_id = path[len("/truth/"):]
            if doc_id not in engine.corpus.docs:
                return self._send(404, "not found", "text/plain")
            return self._send(200, json.dumps(engine.truth(doc_id), separators=(",", ":")))
        return self._send(404, "not found", "text/plain")


class SimServer:
    """Threaded HTTP front end; ``port=0`` picks a free port."""

    def __init__(self, engine: SimEngine, host: str = "127.0.0.1", port: int = 0,
                 allow_truth: bool = False):
        self.httpd = ThreadingHTTPServer((host, port), _Handler)
        self.httpd.engine = engine
        self.httpd.allow_truth = allow_truth
        self.httpd.daemon_threads = True
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def serve_forever(self):
        self.httpd.serve_forever()

    def start(self) -> "SimServer":
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class HttpSimClient(EngineClient):
    """Talks to a running :class:`SimServer` over HTTP."""

    def __init__(self, base_url: str, engine_name: str = "simengine", timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.engine_name = engine_name
        self.timeout = timeout

    def name(self) -> str:
        return self.engine_name

    def _get(self, path: str, session: Session | None = None):
        req = urllib.request.Request(self.base_url + path)
        if session is not None and session.cookies:
            req.add_header("Cookie", session.cookie_header())
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.read().decode("utf-8"), resp.headers
        except urllib.error.HTTPError as exc:
            raise KeyError(f"{exc.code} {path}") from exc
        except urllib.error.URLError as exc:
            raise TimeoutError(str(exc.reason)) from exc

    def search(self, query: Query, profile: BotProfile, session: Session) -> SerpRecord:
        qs = urllib.parse.urlencode({"q": query.text, "loc": profile.location,
                                     "lang": profile.language, "ip": profile.ip_label})
        body, _ = self._get(f"/search?{qs}", session)
        try:
            payload = json.loads(body)
            results = tuple(RankedResult(**r) for r in payload["results"])
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(str(exc)) from exc
        return SerpRecord.for_profile(profile, audit_id=session.audit_id, engine=self.name(),
                                      query=query, timestamp_ms=session.timestamp_ms,
                                      results=results,
                                      status=Status.OK if results else Status.PARSE_FAILURE)

    def fetch_page(self, url: str, profile: BotProfile, session: Session) -> str:
        track = _parse_track(url)
        if track:
            parts = urllib.parse.urlsplit(url)
            body, headers = self._get(f"{parts.path}?{parts.query}", session)
            for raw in headers.get_all("Set-Cookie") or []:
                name, value = raw.split(";", 1)[0].split("=", 1)
                session.set_cookie(name, value, track[3])
            return body
        m = re.search(r"/(\d{3}-\d{3})$", url)
        if not m:
            raise KeyError(f"404 {url}")
        body, _ = self._get(f"/page/{m.group(1)}", session)
        return body

    def truth(self, doc_id: str) -> dict:
        body, _ = self._get(f"/truth/{doc_id}")
        return json.loads(body)
