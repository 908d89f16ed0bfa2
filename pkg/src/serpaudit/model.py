"""Shared domain types and the newline-delimited audit log formats.

Every record on disk is one UTF-8 JSON object per line, fields in a fixed
order, with a leading ``"v"`` version field. Lines carry no cross-line
state, so a log can be appended to by one writer and streamed by any
number of readers.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Iterator
from urllib.parse import urlsplit

LOG_VERSION = 1


class DataError(Exception):
    """Input data violates a documented contract."""


class LogFormatError(DataError):
    def __init__(self, path, line_no: int, reason: str):
        super().__init__(f"{path}:{line_no}: {reason}")
        self.path = path
        self.line_no = line_no
        self.reason = reason


class LogVersionError(LogFormatError):
    pass


class BotType(str, enum.Enum):
    TYPE1 = "Type1"
    TYPE2 = "Type2"
    TYPE3 = "Type3"


class HistoryKind(str, enum.Enum):
    STATELESS = "Stateless"
    GENERAL_NEWS = "GeneralNews"
    CONFLICT_NEWS = "ConflictNews"


class QueryCategory(str, enum.Enum):
    GENERAL = "General"
    SPECIFIC = "Specific"


class Status(str, enum.Enum):
    OK = "Ok"
    CAPTCHA_BLOCKED = "CaptchaBlocked"
    TIMEOUT = "Timeout"
    PARSE_FAILURE = "ParseFailure"


class Metric(str, enum.Enum):
    DRBO = "DRbo"
    EDIT_DISTANCE = "EditDistance"
    SYMDIFF10 = "SymDiff10"
    COMMON_TOP3 = "CommonTop3"
    DRBO_CATEGORY = "DRboCategory"


class Leaning(str, enum.Enum):
    PRO_ISRAEL = "ProIsrael"
    SLIGHTLY_PRO_ISRAEL = "SlightlyProIsrael"
    NEUTRAL = "Neutral"
    SLIGHTLY_PRO_PALESTINE = "SlightlyProPalestine"
    PRO_PALESTINE = "ProPalestine"


LEANING_SCALE: tuple[Leaning, ...] = tuple(Leaning)

# closed website-category vocabulary (general-query and specific-query domains)
GENERAL_CATEGORIES = (
    "Reference", "Entertainment", "Education", "Technology", "News", "Lifestyle",
    "Business", "Finance", "Health", "Government", "Non-Profit", "Social Media",
    "Travel", "E-Commerce", "Art", "Science", "Fashion", "Legal", "Career",
    "Retail", "Automotive", "Food",
)
SPECIFIC_CATEGORIES = (
    "Reference", "Education", "Government", "News", "Fact-Checking", "Social Media",
    "Non-Profit", "Entertainment", "Finance", "Religion", "E-Commerce", "Technology",
    "Sports", "Travel", "Science",
)
CATEGORY_VOCABULARY: tuple[str, ...] = tuple(
    dict.fromkeys(GENERAL_CATEGORIES + SPECIFIC_CATEGORIES)
)


DEFAULT_LANGUAGE = "en"

# location code -> default browser language. Locations are plain strings on
# disk, so new geographies only need a registry entry.
LOCATIONS: dict[str, str] = {
    "IL": "he",
    "SA": "ar",
    "BR": "pt",
    "US_NY": "en",
}


def register_location(code: str, language: str) -> None:
    if not code or not language:
        raise ValueError("location code and language must be non-empty")
    LOCATIONS[code] = language


def _check_location(location: str) -> None:
    if location not in LOCATIONS:
        raise ValueError(f"unknown location {location!r}; register it first")


@dataclass(frozen=True)
class BotProfile:
    bot_id: str
    bot_type: BotType
    location: str
    language: str = DEFAULT_LANGUAGE
    history_kind: HistoryKind = HistoryKind.STATELESS
    cookie_jar: tuple[tuple[str, str, str], ...] = ()
    ip_label: str = ""
    proxy_url: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "bot_type", BotType(self.bot_type))
        object.__setattr__(self, "history_kind", HistoryKind(self.history_kind))
        object.__setattr__(
            self, "cookie_jar", tuple(tuple(c) for c in self.cookie_jar)
        )
        if not self.bot_id:
            raise ValueError("bot_id must be non-empty")
        _check_location(self.location)
        if self.bot_type is BotType.TYPE1 and self.language != DEFAULT_LANGUAGE:
            raise ValueError("Type1 bots use the default language")
        if self.bot_type is not BotType.TYPE3 and self.history_kind is not HistoryKind.STATELESS:
            raise ValueError(f"{self.bot_type.value} bots are stateless")
        if self.history_kind is HistoryKind.STATELESS and self.cookie_jar:
            raise ValueError("stateless bots carry an empty cookie jar")
        for c in self.cookie_jar:
            if len(c) != 3:
                raise ValueError(f"cookie must be (name, value, domain): {c!r}")
        if not self.ip_label:
            object.__setattr__(self, "ip_label", self.bot_id)

    def to_dict(self) -> dict:
        return {
            "bot_id": self.bot_id,
            "bot_type": self.bot_type.value,
            "location": self.location,
            "language": self.language,
            "history_kind": self.history_kind.value,
            "cookie_jar": [list(c) for c in self.cookie_jar],
            "ip_label": self.ip_label,
            "proxy_url": self.proxy_url,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BotProfile":
        return cls(
            bot_id=d["bot_id"],
            bot_type=BotType(d["bot_type"]),
            location=d["location"],
            language=d.get("language", DEFAULT_LANGUAGE),
            history_kind=HistoryKind(d.get("history_kind", "Stateless")),
            cookie_jar=tuple(tuple(c) for c in d.get("cookie_jar", ())),
            ip_label=d.get("ip_label", ""),
            proxy_url=d.get("proxy_url"),
        )


@dataclass(frozen=True)
class Query:
    text: str
    category: QueryCategory
    in_type3_subset: bool = False

    def __post_init__(self):
        object.__setattr__(self, "category", QueryCategory(self.category))
        if not self.text.split():
            raise ValueError("query text must contain at least one token")

    @property
    def word_count(self) -> int:
        return len(self.text.split())


@dataclass(frozen=True)
class RankedResult:
    rank: int
    url: str
    domain: str = ""
    title: str = ""
    snippet: str = ""

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError(f"rank must be >= 1, got {self.rank}")
        if not self.domain:
            object.__setattr__(self, "domain", registrable_domain(self.url))

    def to_dict(self) -> dict:
        return {
            "rank": self.rank,
            "url": self.url,
            "domain": self.domain,
            "title": self.title,
            "snippet": self.snippet,
        }


@dataclass(frozen=True)
class SerpRecord:
    audit_id: str
    engine: str
    bot_id: str
    query: Query
    timestamp_ms: int
    results: tuple[RankedResult, ...] = ()
    status: Status = Status.OK
    bot_type: BotType = BotType.TYPE1
    location: str = "US_NY"
    language: str = DEFAULT_LANGUAGE
    history_kind: HistoryKind = HistoryKind.STATELESS
    ip_label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "status", Status(self.status))
        object.__setattr__(self, "bot_type", BotType(self.bot_type))
        object.__setattr__(self, "history_kind", HistoryKind(self.history_kind))
        object.__setattr__(self, "results", tuple(self.results))
        if self.status is Status.OK and not self.results:
            raise ValueError("Ok records need at least one result")
        if self.status is not Status.OK and self.results:
            raise ValueError("failed records carry no results")
        for i, r in enumerate(self.results, start=1):
            if r.rank != i:
                raise ValueError(
                    f"ranks must be contiguous from 1; got {[x.rank for x in self.results]}"
                )
        if not self.ip_label:
            object.__setattr__(self, "ip_label", self.bot_id)

    @property
    def urls(self) -> list[str]:
        return [r.url for r in self.results]

    @classmethod
    def for_profile(cls, profile: BotProfile, **kw) -> "SerpRecord":
        return cls(
            bot_id=profile.bot_id,
            bot_type=profile.bot_type,
            location=profile.location,
            language=profile.language,
            history_kind=profile.history_kind,
            ip_label=profile.ip_label,
            **kw,
        )


@dataclass(frozen=True)
class MetricConfig:
    p: float = 0.7
    top_k_symdiff: int = 10
    top_k_common: int = 3
    rbo_variant: str = "ext"

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ValueError(f"persistence p must lie in (0, 1), got {self.p}")
        if self.rbo_variant not in ("ext", "min"):
            raise ValueError(f"unknown RBO variant {self.rbo_variant!r}")


@dataclass(frozen=True)
class ComparisonRecord:
    audit_id: str
    engine: str
    query: Query
    bot_a: str
    bot_b: str
    same_location: bool
    metric: Metric
    value: float
    bot_type: BotType = BotType.TYPE1

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        object.__setattr__(self, "bot_type", BotType(self.bot_type))
        if self.bot_a == self.bot_b:
            raise ValueError("a comparison needs two distinct bots")
        if self.metric in (Metric.DRBO, Metric.DRBO_CATEGORY):
            if not 0.0 <= self.value <= 1.0:
                raise ValueError(f"D must lie in [0, 1], got {self.value}")
        elif self.value < 0 or self.value != int(self.value):
            raise ValueError(f"count metrics are non-negative integers, got {self.value}")


# --- registrable domains -----------------------------------------------------

@lru_cache(maxsize=1)
def _suffix_rules() -> tuple[frozenset, frozenset, frozenset]:
    rules, wildcards, exceptions = set(), set(), set()
    text = resources.files("serpaudit.data").joinpath("public_suffix_list.dat").read_text("utf-8")
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("//"):
            continue
        rule = line.split()[0].lower()
        rule = rule.encode("idna").decode("ascii") if not rule.isascii() else rule
        if rule.startswith("!"):
            exceptions.add(rule[1:])
        elif rule.startswith("*."):
            wildcards.add(rule[2:])
        else:
            rules.add(rule)
    return frozenset(rules), frozenset(wildcards), frozenset(exceptions)


def public_suffix(host: str) -> str:
    rules, wildcards, exceptions = _suffix_rules()
    labels = host.split(".")
    # Longest matching rule wins; exceptions beat wildcards; "*" is implicit.
    best = 1
    for i in range(len(labels)):
        candidate = ".".join(labels[i:])
        n = len(labels) - i
        if candidate in exceptions:
            return ".".join(labels[i + 1:])
        if candidate in rules and n > best:
            best = n
        if i > 0 and candidate in wildcards and n + 1 > best:
            best = n + 1
    return ".".join(labels[-best:])


def registrable_domain(url: str) -> str:
    """Lowercased registrable domain (public suffix plus one label) of ``url``.

    >>> registrable_domain("https://en.wikipedia.org/wiki/Gaza")
    'wikipedia.org'
    """
    parts = urlsplit(url)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ValueError(f"not an absolute http(s) URL: {url!r}")
    host = parts.hostname.rstrip(".").lower()
    try:
        host = host.encode("idna").decode("ascii")
    except UnicodeError as exc:
        raise ValueError(f"invalid host in {url!r}") from exc
    if all(label.isdigit() for label in host.split(".")) or ":" in host:
        return host
    suffix = public_suffix(host)
    if host == suffix:
        raise ValueError(f"{url!r} has no registrable domain (host is a public suffix)")
    labels = host.split(".")
    return ".".join(labels[-(suffix.count(".") + 2):])


# --- SERP log ------------------------------------------------------------------

def serp_to_line(rec: SerpRecord) -> str:
    obj = {
        "v": LOG_VERSION,
        "audit_id": rec.audit_id,
        "engine": rec.engine,
        "bot_id": rec.bot_id,
        "bot_type": rec.bot_type.value,
        "location": rec.location,
        "language": rec.language,
        "history_kind": rec.history_kind.value,
        "query_text": rec.query.text,
        "query_category": rec.query.category.value,
        "timestamp_ms": rec.timestamp_ms,
        "status": rec.status.value,
        "results": [r.to_dict() for r in rec.results],
        "ip_label": rec.ip_label,
        "query_in_type3": rec.query.in_type3_subset,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def serp_from_obj(obj: dict) -> SerpRecord:
    return SerpRecord(
        audit_id=obj["audit_id"],
        engine=obj["engine"],
        bot_id=obj["bot_id"],
        query=Query(obj["query_text"], QueryCategory(obj["query_category"]),
                    bool(obj.get("query_in_type3", False))),
        timestamp_ms=int(obj["timestamp_ms"]),
        results=tuple(RankedResult(**r) for r in obj["results"]),
        status=Status(obj["status"]),
        bot_type=BotType(obj["bot_type"]),
        location=obj["location"],
        language=obj["language"],
        history_kind=HistoryKind(obj["history_kind"]),
        ip_label=obj.get("ip_label", ""),
    )


def _append_lines(lines: Iterable[str], path) -> int:
    n = 0
    with open(path, "ab") as fh:
        for line in lines:
            data = line.encode("utf-8")
            start = fh.tell()
            try:
                fh.write(data)
                fh.flush()
            except OSError:
                # never leave a partial line behind
                fh.truncate(start)
                raise
            n += 1
    return n


def write_serp_log(records: Iterable[SerpRecord], path) -> int:
    """Append ``records`` to ``path`` one line each; returns the count written."""
    return _append_lines((serp_to_line(r) for r in records), path)


def _iter_objects(path, kind: str | None = None) -> Iterator[tuple[int, dict]]:
    with open(path, "rb") as fh:
        for line_no, raw in enumerate(fh, start=1):
            if not raw.endswith(b"\n"):
                raise LogFormatError(path, line_no, "truncated line (no newline)")
            try:
                obj = json.loads(raw.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise LogFormatError(path, line_no, f"malformed record: {exc}") from exc
            if not isinstance(obj, dict) or "v" not in obj:
                raise LogFormatError(path, line_no, "missing version field")
            if obj["v"] != LOG_VERSION:
                raise LogVersionError(path, line_no, f"unsupported log version {obj['v']!r}")
            if kind is not None and obj.get("kind", "serp") != kind:
                raise LogFormatError(path, line_no, f"expected a {kind} record")
            yield line_no, obj


def read_serp_log(path) -> Iterator[SerpRecord]:
    for line_no, obj in _iter_objects(path, "serp"):
        try:
            yield serp_from_obj(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(path, line_no, f"invalid record: {exc}") from exc


# --- comparison and statistics lines --------------------------------------------

def _num(x: float):
    # JSON has no inf/nan
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


_NUMERIC_KEYS = ("statistic", "p_value", "p_adjusted")


def comparison_to_line(rec: ComparisonRecord) -> str:
    obj = {
        "v": LOG_VERSION,
        "kind": "comparison",
        "audit_id": rec.audit_id,
        "engine": rec.engine,
        "query_text": rec.query.text,
        "query_category": rec.query.category.value,
        "query_in_type3": rec.query.in_type3_subset,
        "bot_a": rec.bot_a,
        "bot_b": rec.bot_b,
        "bot_type": rec.bot_type.value,
        "same_location": rec.same_location,
        "metric": rec.metric.value,
        "value": rec.value,
    }
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"


def write_comparisons(records: Iterable[ComparisonRecord], path) -> int:
    return _append_lines((comparison_to_line(r) for r in records), path)


def read_comparisons(path) -> Iterator[ComparisonRecord]:
    for line_no, o in _iter_objects(path, "comparison"):
        try:
            yield ComparisonRecord(
                audit_id=o["audit_id"], engine=o["engine"],
                query=Query(o["query_text"], o["query_category"], o["query_in_type3"]),
                bot_a=o["bot_a"], bot_b=o["bot_b"], same_location=o["same_location"],
                metric=Metric(o["metric"]), value=o["value"], bot_type=BotType(o["bot_type"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(path, line_no, f"invalid record: {exc}") from exc


def write_stat_results(results, path) -> int:
    def line(r):
        obj = {"v": LOG_VERSION, "kind": "stat"}
        obj.update({k: _num(v) for k, v in r.to_dict().items()})
        return json.dumps(obj, ensure_ascii=False, separators=(",", ":")) + "\n"
    return _append_lines((line(r) for r in results), path)


def read_stat_results(path):
    from .stats import StatResult

    for line_no, o in _iter_objects(path, "stat"):
        o = {k: (float(v) if k in _NUMERIC_KEYS and isinstance(v, str) else v)
             for k, v in o.items() if k not in ("v", "kind")}
        try:
            yield StatResult.from_dict(o)
        except (KeyError, TypeError, ValueError) as exc:
            raise LogFormatError(path, line_no, f"invalid record: {exc}") from exc


# --- corpus & profile files -----------------------------------------------------

def load_queries(path=None) -> list[Query]:
    """Read a query corpus CSV (text, category, in_type3_subset).

    Without ``path`` the bundled corpus of 27 general and 27 conflict-specific
    queries is returned.
    """
    if path is None:
        text = resources.files("serpaudit.data").joinpath("queries.csv").read_text("utf-8")
        rows = list(csv.DictReader(text.splitlines()))
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        flag = str(row.get("in_type3_subset", "false")).strip().lower()
        out.append(Query(row["text"], QueryCategory(row["category"]), flag in ("1", "true", "yes")))
    return out


def save_profiles(profiles: Iterable[BotProfile], path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump([p.to_dict() for p in profiles], fh, ensure_ascii=False, indent=1)
        fh.write("\n")
    os.replace(tmp, path)


def load_profiles(path) -> list[BotProfile]:
    with open(path, encoding="utf-8") as fh:
        return [BotProfile.from_dict(d) for d in json.load(fh)]

