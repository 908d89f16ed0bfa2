"""Domain categories and article leaning labels.

Categories come from a pluggable text annotator (HTTP service or the offline
stub), are cached on disk per (domain, prompt) and can be overridden by a
hand-verified file. Leaning labels come from human coders through an import
file; a label counts only when enough coders agree exactly.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import logging
import os
import re
import tempfile
import time
import urllib.error
import urllib.request
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

from .model import (
    CATEGORY_VOCABULARY,
    LEANING_SCALE,
    DataError,
    Leaning,
    SerpRecord,
    Status,
)

log = logging.getLogger(__name__)

UNRESOLVED = "Unresolved"


class AnnotatorError(DataError):
    pass


class CategorySource(str, enum.Enum):
    AUTO = "Auto"
    MANUAL_VERIFIED = "ManualVerified"


class CoderKind(str, enum.Enum):
    MACHINE = "Machine"
    HUMAN = "Human"


class Scope(str, enum.Enum):
    ALL = "All"
    TOP3 = "Top3"


def load_prompt(name: str) -> str:
    """Bundled prompt template, ``"category"`` or ``"leaning"``."""
    return (resources.files("serpaudit.data") / "prompts" / f"{name}.txt").read_text("utf-8")


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


# --- category map ---------------------------------------------------------------

def check_category(label: str) -> str:
    if label not in CATEGORY_VOCABULARY:
        raise AnnotatorError(f"category {label!r} is outside the vocabulary")
    return label


class CategoryMap(Mapping):
    """domain -> (category, source). Manual entries always beat automatic ones."""

    def __init__(self, entries: Mapping[str, tuple[str, CategorySource]] | None = None):
        self._entries: dict[str, tuple[str, CategorySource]] = {}
        for dom, (cat, src) in (entries or {}).items():
            self.set(dom, cat, CategorySource(src))

    def set(self, domain: str, category: str, source: CategorySource = CategorySource.AUTO) -> None:
        check_category(category)
        source = CategorySource(source)
        old = self._entries.get(domain)
        if (old and old[1] is CategorySource.MANUAL_VERIFIED
                and source is CategorySource.AUTO):
            return
        self._entries[domain] = (category, source)

    def category(self, domain: str) -> str:
        return self._entries[domain][0]

    def source(self, domain: str) -> CategorySource:
        return self._entries[domain][1]

    def __getitem__(self, domain):
        return self._entries[domain]

    def __iter__(self):
        return iter(sorted(self._entries))

    def __len__(self):
        return len(self._entries)

    def __eq__(self, other):
        if isinstance(other, CategoryMap):
            return self._entries == other._entries
        return NotImplemented

    def plain(self) -> dict[str, str]:
        return {d: c for d, (c, _) in self._entries.items()}

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["domain", "category", "source"])
            for d in self:
                c, s = self._entries[d]
                w.writerow([d, c, s.value])

    @classmethod
    def load(cls, path) -> "CategoryMap":
        out = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                out.set(row["domain"], row["category"],
                        CategorySource(row.get("source") or CategorySource.AUTO))
        return out


def load_overrides(path) -> dict[str, str]:
    """Rows of (domain, category); a header row is optional."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for i, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].startswith("#"):
                continue
            if i == 1 and row[0].strip().lower() == "domain":
                continue
            if len(row) < 2:
                raise DataError(f"{path}:{i}: expected domain,category")
            out[row[0].strip()] = check_category(row[1].strip())
    return out


# --- annotators -----------------------------------------------------------------

class Annotator:
    """Labels one text under a prompt. Subclasses count their calls."""

    calls: int = 0

    def label(self, prompt: str, text: str) -> str:
        raise NotImplementedError


class HttpAnnotator(Annotator):
    """Client for a text-labelling service: POST {prompt, text} -> {label}."""

    def __init__(self, url: str, timeout: float = 30.0, retries: int = 2,
                 backoff_s: float = 1.0, headers: Mapping[str, str] | None = None):
        self.url = url
        self.timeout = timeout
        self.retries = retries
        self.backoff_s = backoff_s
        self.headers = dict(headers or {})
        self.calls = 0

    def label(self, prompt: str, text: str) -> str:
        body = json.dumps({"prompt": prompt, "text": text}).encode("utf-8")
        last = None
        for attempt in range(self.retries + 1):
            self.calls += 1
            req = urllib.request.Request(
                self.url, data=body, method="POST",
                headers={"Content-Type": "application/json", **self.headers})
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    reply = json.loads(resp.read().decode("utf-8"))
                return str(reply["label"]).strip()
            except (urllib.error.URLError, OSError, ValueError, KeyError) as exc:
                last = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_s * (attempt + 1))
        raise AnnotatorError(f"annotator at {self.url} failed: {last}")


# longest stem first so that no stem shadows a longer one
_STEM_RULES = sorted([
    ("wiki", "Reference"), ("fun", "Entertainment"), ("learn", "Education"),
    ("tech", "Technology"), ("news", "News"), ("living", "Lifestyle"),
    ("biz", "Business"), ("money", "Finance"), ("health", "Health"),
    ("gov", "Government"), ("ngo", "Non-Profit"), ("social", "Social Media"),
    ("travel", "Travel"), ("shop", "E-Commerce"), ("art", "Art"),
    ("science", "Science"), ("style", "Fashion"), ("law", "Legal"),
    ("jobs", "Career"), ("store", "Retail"), ("auto", "Automotive"),
    ("food", "Food"), ("factcheck", "Fact-Checking"), ("faith", "Religion"),
    ("sports", "Sports"),
], key=lambda r: -len(r[0]))


class StubCategoryAnnotator(Annotator):
    """Offline annotator that reads the category off the domain's stem.

    Stems follow the simulator's domain naming; anything else is "Reference",
    the catch-all for unfamiliar sites.
    """

    def __init__(self, fallback: str = "Reference"):
        self.fallback = check_category(fallback)
        self.calls = 0

    def label(self, prompt: str, text: str) -> str:
        self.calls += 1
        host = text.strip().lower()
        if host.startswith("www."):
            host = host[4:]
        for stem, cat in _STEM_RULES:
            if host.startswith(stem):
                return cat
        return self.fallback


_LEANING_CUES = {
    Leaning.PRO_ISRAEL: ("right of israeli families", "without rocket fire"),
    Leaning.SLIGHTLY_PRO_ISRAEL: ("israeli security concerns",),
    Leaning.NEUTRAL: ("both sides issued statements", "known facts"),
    Leaning.SLIGHTLY_PRO_PALESTINE: ("hardship for palestinian civilians",),
    Leaning.PRO_PALESTINE: ("condemned the siege", "mourned palestinian lives"),
}


class StubLeaningAnnotator(Annotator):
    """Offline leaning classifier that counts cue phrases; ties go to Neutral."""

    def __init__(self):
        self.calls = 0

    def label(self, prompt: str, text: str) -> str:
        self.calls += 1
        low = text.lower()
        hits = {lab: sum(low.count(c) for c in cues) for lab, cues in _LEANING_CUES.items()}
        best = max(hits.values())
        top = [lab for lab, h in hits.items() if h == best]
        if best == 0 or len(top) > 1:
            return Leaning.NEUTRAL.value
        return top[0].value


# --- categorization -------------------------------------------------------------

def _cache_file(cache_dir: Path, domain: str, phash: str) -> Path:
    key = hashlib.sha256(f"{domain}\x00{phash}".encode("utf-8")).hexdigest()
    return cache_dir / f"{key}.json"


def _write_atomic(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)  # last write wins


def categorize_domains(domains: Iterable[str], annotator: Annotator | None,
                       overrides_path=None, cache_dir=None, prompt: str | None = None,
                       workers: int = 4) -> CategoryMap:
    """Map every domain to a category.

    Cached answers are reused without calling ``annotator``; fresh answers are
    cached one file per (domain, prompt) key. Overrides are applied last and
    marked as manually verified.
    """
    prompt = prompt if prompt is not None else load_prompt("category")
    phash = prompt_hash(prompt)
    cache = Path(cache_dir) if cache_dir else None
    if cache:
        cache.mkdir(parents=True, exist_ok=True)
    overrides = load_overrides(overrides_path) if overrides_path else {}
    todo = sorted(set(domains))
    cmap = CategoryMap()
    pending = []
    for dom in todo:
        if dom in overrides:
            continue
        hit = _cache_file(cache, dom, phash) if cache else None
        if hit and hit.exists():
            cmap.set(dom, check_category(json.loads(hit.read_text("utf-8"))["label"]))
        else:
            pending.append(dom)

    def ask(dom):
        try:
            return dom, annotator.label(prompt, dom), None
        except Exception as exc:  # collected and reported together
            return dom, None, exc

    failed = []
    if pending:
        if annotator is None:
            raise AnnotatorError("no annotator and no cache for: " + ", ".join(pending))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                answers = list(pool.map(ask, pending))
        else:
            answers = [ask(d) for d in pending]
        for dom, lab, exc in answers:
            if exc is not None:
                failed.append(dom)
                log.warning("annotator failed on %s: %s", dom, exc)
                continue
            if lab not in CATEGORY_VOCABULARY:
                raise AnnotatorError(f"annotator answered {lab!r} for {dom}, not a known category")
            cmap.set(dom, lab)
            if cache:
                _write_atomic(_cache_file(cache, dom, phash),
                              json.dumps({"domain": dom, "prompt_hash": phash, "label": lab}))
    if failed:
        raise AnnotatorError("uncategorized domains: " + ", ".join(failed))
    for dom, cat in overrides.items():
        cmap.set(dom, cat, CategorySource.MANUAL_VERIFIED)
    return cmap


def domains_in(records: Iterable[SerpRecord]) -> list[str]:
    return sorted({r.domain for rec in records for r in rec.results})


# --- article text ---------------------------------------------------------------

_SKIP_TAGS = {"nav", "header", "footer", "script", "style", "noscript", "aside", "form"}


class _TextExtractor(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.title: list[str] = []
        self.body: list[str] = []
        self._skip = 0
        self._in_title = False

    def handle_starttag(self, tag, attrs):
        if tag in _SKIP_TAGS:
            self._skip += 1
        elif tag == "title":
            self._in_title = True

    def handle_endtag(self, tag):
        if tag in _SKIP_TAGS and self._skip:
            self._skip -= 1
        elif tag == "title":
            self._in_title = False

    def handle_data(self, data):
        if self._in_title:
            self.title.append(data)
        elif not self._skip:
            self.body.append(data)


def _squash(parts: Sequence[str]) -> str:
    return re.sub(r"\s+", " ", " ".join(parts)).strip()


def prepare_article(url: str, raw_html: str,
                    translate: Callable[[str], str] | None = None) -> str:
    """Title and body text with page chrome and every mention of the source site removed.

    ``translate`` runs on the cleaned text; the default leaves it unchanged.
    """
    from .model import registrable_domain

    p = _TextExtractor()
    p.feed(raw_html)
    p.close()
    title, body = _squash(p.title), _squash(p.body)
    domain = registrable_domain(url)
    host = re.sub(r"^https?://", "", url).split("/", 1)[0].split(":", 1)[0]
    label = domain.split(".", 1)[0]
    for s in sorted({host, domain, label}, key=len, reverse=True):
        pat = re.compile(r"(?:www\.)?" + re.escape(s), re.IGNORECASE)
        title, body = pat.sub("", title), pat.sub("", body)
    title = re.sub(r"\s+", " ", title).strip(" -|")
    body = re.sub(r"\s+", " ", body).strip()
    body = re.sub(r"\s+([.,;:])", r"\1", body)
    if not body:
        raise DataError(f"no article text could be extracted from {url}")
    text = f"{title}\n\n{body}" if title else body
    return translate(text) if translate else text


# --- leaning labels -------------------------------------------------------------

@dataclass(frozen=True)
class LeaningLabel:
    url: str
    coder_id: str
    label: Leaning
    coder_kind: CoderKind = CoderKind.HUMAN
    survey_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "label", Leaning(self.label))
        object.__setattr__(self, "coder_kind", CoderKind(self.coder_kind))


def _check_unique(labels: Iterable[LeaningLabel]) -> None:
    seen = set()
    for lab in labels:
        key = (lab.url, lab.coder_id)
        if key in seen:
            raise DataError(f"coder {lab.coder_id} labelled {lab.url} twice")
        seen.add(key)


_TRUE = {"1", "true", "yes", "y", "t"}


def load_labels(path, coder_kind: CoderKind = CoderKind.HUMAN) -> list[LeaningLabel]:
    """Read (url, coder_id, label, survey_id, attention_pass) rows.

    Rows that failed the attention check are dropped.
    """
    out, dropped = [], 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"url", "coder_id", "label"}
        if not need <= set(reader.fieldnames or ()):
            raise DataError(f"{path}: header must include {sorted(need)}")
        for i, row in enumerate(reader, start=2):
            if str(row.get("attention_pass", "true")).strip().lower() not in _TRUE:
                dropped += 1
                continue
            try:
                lab = Leaning(row["label"].strip())
            except ValueError:
                raise DataError(f"{path}:{i}: unknown leaning {row['label']!r}") from None
            out.append(LeaningLabel(row["url"].strip(), row["coder_id"].strip(), lab,
                                    coder_kind, (row.get("survey_id") or "").strip()))
    if dropped:
        log.info("%s: dropped %d rows that failed attention checks", path, dropped)
    _check_unique(out)
    return out


def save_labels(labels: Iterable[LeaningLabel], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["url", "coder_id", "label", "survey_id", "attention_pass"])
        for lab in labels:
            w.writerow([lab.url, lab.coder_id, lab.label.value, lab.survey_id, "true"])


def collapse3(label: Leaning) -> str:
    """Fold the five-point scale to pro-Israel / neutral / pro-Palestine."""
    if label in (Leaning.PRO_ISRAEL, Leaning.SLIGHTLY_PRO_ISRAEL):
        return "Israel"
    if label in (Leaning.PRO_PALESTINE, Leaning.SLIGHTLY_PRO_PALESTINE):
        return "Palestine"
    return "Neutral"


def consensus(labels: Iterable[LeaningLabel], min_agree: int = 2,
              collapse: bool = False) -> dict[str, Leaning | str]:
    """url -> agreed label, or ``UNRESOLVED``; machine labels are ignored.

    With ``collapse`` agreement is tested on the three-way scale; the resolved
    value is then the commonest exact label among the agreeing coders, ties
    going to the label earlier on the scale.
    """
    by_url: dict[str, list[Leaning]] = defaultdict(list)
    labels = list(labels)
    _check_unique(labels)
    for lab in labels:
        if lab.coder_kind is CoderKind.HUMAN:
            by_url[lab.url].append(lab.label)
        else:
            by_url.setdefault(lab.url, [])
    out: dict[str, Leaning | str] = {}
    for url in sorted(by_url):
        votes = by_url[url]
        key = collapse3 if collapse else (lambda x: x)
        groups = Counter(key(v) for v in votes)
        winners = [g for g, n in groups.items() if n >= min_agree]
        if len(winners) != 1:
            out[url] = UNRESOLVED
            continue
        members = Counter(v for v in votes if key(v) == winners[0])
        top = max(members.values())
        out[url] = min((v for v, n in members.items() if n == top), key=LEANING_SCALE.index)
    return out


def machine_labels(urls_pages: Iterable[tuple[str, str]], annotator: Annotator,
                   prompt: str | None = None, coder_id: str = "machine") -> list[LeaningLabel]:
    """Label prepared article texts with an annotator; kept apart from human consensus."""
    prompt = prompt if prompt is not None else load_prompt("leaning")
    out = []
    for url, text in urls_pages:
        lab = annotator.label(prompt, text)
        try:
            out.append(LeaningLabel(url, coder_id, Leaning(lab), CoderKind.MACHINE))
        except ValueError:
            raise AnnotatorError(f"annotator answered {lab!r} for {url}, not a leaning label") from None
    return out


# --- aggregation ----------------------------------------------------------------

@dataclass(frozen=True)
class LeaningCell:
    engine: str
    location: str
    scope: Scope
    counts: tuple[int, ...]
    proportions: tuple[float, ...]

    @property
    def n(self) -> int:
        return sum(self.counts)


def _category_of(catmap: Mapping, domain: str):
    c = catmap.get(domain)
    return c[0] if isinstance(c, tuple) else c


def leaning_proportions(records: Iterable[SerpRecord], resolved: Mapping[str, object],
                        catmap: Mapping, scope: Scope | str = Scope.ALL,
                        notes: list | None = None) -> dict[tuple[str, str], LeaningCell]:
    """Share of each leaning among news results, per (engine, location).

    Every occurrence of a news URL counts, so a story shown to many bots weighs
    more. Unresolved and unlabelled URLs are left out of the denominator;
    cells with nothing left are omitted and noted.
    """
    scope = Scope(scope)
    counts: dict[tuple[str, str], np.ndarray] = {}
    unlabelled = Counter()
    for rec in records:
        if rec.status is not Status.OK:
            continue
        cell = counts.setdefault((rec.engine, rec.location), np.zeros(len(LEANING_SCALE), int))
        for r in rec.results:
            if scope is Scope.TOP3 and r.rank > 3:
                continue
            if _category_of(catmap, r.domain) != "News":
                continue
            lab = resolved.get(r.url, UNRESOLVED)
            if lab == UNRESOLVED:
                unlabelled[(rec.engine, rec.location)] += 1
                continue
            cell[LEANING_SCALE.index(Leaning(lab))] += 1
    out = {}
    for key in sorted(counts):
        c = counts[key]
        total = int(c.sum())
        if total == 0:
            msg = f"no labelled news results for engine={key[0]} location={key[1]} scope={scope.value}"
            log.warning(msg)
            if notes is not None:
                notes.append(msg)
            continue
        out[key] = LeaningCell(key[0], key[1], scope, tuple(int(x) for x in c),
                               tuple(float(x) / total for x in c))
    return out


def agreement_matrix(machine: Iterable[LeaningLabel],
                     human: Mapping[str, object] | Iterable[LeaningLabel]) -> np.ndarray:
    """Row-normalized 5x5 matrix: row = machine label, column = human label.

    ``human`` is either resolved consensus (url -> label) or raw human labels,
    in which case every human label of a shared url is counted.
    """
    if isinstance(human, Mapping):
        hum = {u: [Leaning(l)] for u, l in human.items() if l != UNRESOLVED}
    else:
        hum = defaultdict(list)
        for lab in human:
            hum[lab.url].append(lab.label)
    mat = np.zeros((5, 5))
    overlap = 0
    for m in machine:
        if m.url not in hum:
            continue
        overlap += 1
        for h in hum[m.url]:
            mat[LEANING_SCALE.index(m.label), LEANING_SCALE.index(h)] += 1
    if overlap == 0:
        raise DataError("machine and human labels share no urls")
    rows = mat.sum(axis=1, keepdims=True)
    return np.divide(mat, rows, out=np.zeros_like(mat), where=rows > 0)


def iter_news_urls(records: Iterable[SerpRecord], catmap: Mapping) -> Iterator[str]:
    seen = set()
    for rec in records:
        for r in rec.results:
            if r.url not in seen and _category_of(catmap, r.domain) == "News":
                seen.add(r.url)
                yield r.url
