"""Bot profiles, browsing-history warm-up and simultaneous multi-bot audits."""

from __future__ import annotations

import csv
import hashlib
import logging
import time
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import yaml

from .model import (
    LOCATIONS,
    BotProfile,
    BotType,
    DataError,
    HistoryKind,
    Query,
    QueryCategory,
    SerpRecord,
    Status,
    load_profiles,
    load_queries,
    write_serp_log,
)

log = logging.getLogger(__name__)

CONFLICT_KEYWORDS = ("Palestine", "Israel", "Hamas", "Netanyahu")
GENERAL_KEYWORDS = ("movie", "health", "well-being", "dinner recipe", "sports")

SIMULTANEITY_WINDOW_MS = 60_000


def stable_rng(*parts) -> np.random.Generator:
    """Generator seeded from an arbitrary tuple of parts, stable across processes."""
    digest = hashlib.blake2b(repr(parts).encode("utf-8"), digest_size=16).digest()
    return np.random.default_rng(int.from_bytes(digest, "little"))


# --- engine access -------------------------------------------------------------

class CaptchaError(Exception):
    pass


class ParseError(Exception):
    pass


class EngineUnavailable(Exception):
    """The whole engine is unreachable; the audit stops querying it."""


class WarmupError(DataError):
    pass


class UrlListError(DataError):
    pass


class BalanceError(DataError):
    pass


@dataclass
class Session:
    """One fresh browser session: the profile's jar plus whatever the engine sets."""

    audit_id: str
    engine: str
    timestamp_ms: int
    cookies: dict = field(default_factory=dict)  # (name, domain) -> value

    @classmethod
    def fresh(cls, profile: BotProfile, audit_id: str = "", engine: str = "",
              timestamp_ms: int = 0) -> "Session":
        jar = {(name, domain): value for name, value, domain in profile.cookie_jar}
        return cls(audit_id, engine, timestamp_ms, jar)

    def set_cookie(self, name: str, value: str, domain: str) -> None:
        self.cookies[(name, domain)] = value

    def jar(self) -> tuple[tuple[str, str, str], ...]:
        return tuple(sorted((n, v, d) for (n, d), v in self.cookies.items()))

    def cookie_header(self) -> str:
        return "; ".join(f"{n}={v}" for (n, _), v in sorted(self.cookies.items()))


class EngineClient:
    """Behavior contract for anything that can answer a search.

    ``search`` returns a :class:`SerpRecord` and may raise :class:`CaptchaError`,
    :class:`ParseError`, :class:`TimeoutError` or :class:`EngineUnavailable`.
    ``fetch_page`` returns the document text and records cookies on ``session``.
    """

    def name(self) -> str:
        raise NotImplementedError

    def search(self, query: Query, profile: BotProfile, session: Session) -> SerpRecord:
        raise NotImplementedError

    def fetch_page(self, url: str, profile: BotProfile, session: Session) -> str:
        raise NotImplementedError


# --- clocks ----------------------------------------------------------------------

class VirtualClock:
    """Deterministic clock: waiting is free and time only moves when advanced."""

    def __init__(self, start_ms: int = 1_700_000_000_000):
        self._now = int(start_ms)

    def now_ms(self) -> int:
        return self._now

    def wait_until(self, t_ms: int) -> int:
        return int(t_ms)

    def advance_to(self, t_ms: int) -> None:
        self._now = max(self._now, int(t_ms))


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)

    def wait_until(self, t_ms: int) -> int:
        delay = t_ms - self.now_ms()
        if delay > 0:
            time.sleep(delay / 1000)
        return self.now_ms()

    def advance_to(self, t_ms: int) -> None:
        self.wait_until(t_ms)


# --- profiles & warm-up ------------------------------------------------------------

TYPE3_HISTORY_MIX = {
    HistoryKind.CONFLICT_NEWS: 3,
    HistoryKind.GENERAL_NEWS: 3,
    HistoryKind.STATELESS: 2,
}


def make_profiles(bot_type, locations: Sequence[str] = tuple(LOCATIONS),
                  per_location: int = 10, history_mix: dict | None = None,
                  proxies: dict | None = None) -> list[BotProfile]:
    """Build a bot fleet: ``per_location`` bots in each location.

    Type3 fleets are split by ``history_mix`` (default 3 conflict, 3 general,
    2 stateless per location) and ``per_location`` is ignored.
    ``proxies`` maps bot_id to a proxy URL.
    """
    bot_type = BotType(bot_type)
    tag = bot_type.value[-1]
    proxies = proxies or {}
    out = []
    for loc in locations:
        lang = "en" if bot_type is BotType.TYPE1 else LOCATIONS[loc]
        if bot_type is BotType.TYPE3:
            mix = {HistoryKind(k): v for k, v in (history_mix or TYPE3_HISTORY_MIX).items()}
            kinds = [k for k, n in mix.items() for _ in range(n)]
        else:
            kinds = [HistoryKind.STATELESS] * per_location
        for i, kind in enumerate(kinds, start=1):
            bot_id = f"t{tag}-{loc}-{i:02d}"
            out.append(BotProfile(bot_id, bot_type, loc, lang, kind,
                                  ip_label=f"{loc}:{bot_type.value}:{i:02d}",
                                  proxy_url=proxies.get(bot_id)))
    return out


@dataclass(frozen=True)
class WarmupSpec:
    url_list_path: str
    visits: int = 20
    seed: int = 0
    per_visit_dwell_ms: tuple[int, int] = (0, 0)
    conflict_keywords: tuple[str, ...] = CONFLICT_KEYWORDS
    general_keywords: tuple[str, ...] = GENERAL_KEYWORDS


def load_url_lists(conflict_keywords: Iterable[str], general_keywords: Iterable[str],
                   source_path, location: str | None = None,
                   language: str | None = None) -> tuple[list[str], list[str]]:
    """Split a news-URL export into conflict and general lists.

    ``source_path`` is a CSV with columns url, keyword, location, language;
    rows are filtered to ``location``/``language`` when given.
    """
    conflict = {k.casefold() for k in conflict_keywords}
    general = {k.casefold() for k in general_keywords}
    out_c, out_g = [], []
    with open(source_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if location is not None and row["location"] != location:
                continue
            if language is not None and row["language"] != language:
                continue
            kw = row["keyword"].strip().casefold()
            if kw in conflict:
                out_c.append(row["url"])
            elif kw in general:
                out_g.append(row["url"])
    where = f"location={location}" if location else "the source file"
    if not out_c:
        raise UrlListError(f"no conflict-news URLs for {where}")
    if not out_g:
        raise UrlListError(f"no general-news URLs for {where}")
    return out_c, out_g


def build_history(profile: BotProfile, spec: WarmupSpec, client: EngineClient,
                  clock=None, visit_log: list | None = None) -> BotProfile:
    """Visit ``spec.visits`` seeded-random news URLs in sequence and keep the cookies.

    A failed visit is retried once and then skipped; more than half the visits
    failing raises :class:`WarmupError`.
    """
    if profile.history_kind is HistoryKind.STATELESS:
        raise ValueError(f"{profile.bot_id} is stateless; nothing to warm up")
    clock = clock or VirtualClock()
    conflict, general = load_url_lists(spec.conflict_keywords, spec.general_keywords,
                                       spec.url_list_path, profile.location)
    pool = conflict if profile.history_kind is HistoryKind.CONFLICT_NEWS else general
    if spec.visits > len(pool):
        raise WarmupError(
            f"{profile.bot_id}: {spec.visits} visits requested but only {len(pool)} URLs"
        )
    rng = stable_rng("warmup", spec.seed, profile.bot_id)
    picks = [pool[i] for i in rng.choice(len(pool), size=spec.visits, replace=False)]
    session = Session.fresh(profile, timestamp_ms=clock.now_ms())
    failures = 0
    lo, hi = spec.per_visit_dwell_ms
    for n, url in enumerate(picks, start=1):
        ok = False
        for attempt in (1, 2):
            try:
                client.fetch_page(url, profile, session)
                ok = True
                break
            except Exception as exc:  # noqa: BLE001 - any fetch failure counts
                log.warning("%s warm-up visit %d attempt %d failed: %s",
                            profile.bot_id, n, attempt, exc)
        failures += not ok
        log.info("%s warm-up visit %d/%d %s %s", profile.bot_id, n, len(picks), url,
                 "ok" if ok else "skipped")
        if visit_log is not None:
            visit_log.append((profile.bot_id, n, url, ok))
        dwell = int(rng.integers(lo, hi + 1)) if hi > lo else lo
        clock.advance_to(clock.wait_until(clock.now_ms() + dwell))
    if failures * 2 > len(picks):
        raise WarmupError(f"{profile.bot_id}: {failures}/{len(picks)} warm-up visits failed")
    return replace(profile, cookie_jar=session.jar())


# --- audit plan ----------------------------------------------------------------------

@dataclass(frozen=True)
class AuditPlan:
    audit_id: str
    engines: tuple[str, ...]
    queries: tuple[Query, ...]
    profiles: tuple[BotProfile, ...]
    repeat_count: int = 1
    inter_query_delay_ms: tuple[int, int] = (0, 0)
    typing_delay_ms: tuple[int, int] = (0, 0)  # per character
    jitter_seed: int = 0
    retries: int = 1
    workers: int = 4
    window_ms: int = SIMULTANEITY_WINDOW_MS

    def __post_init__(self):
        for name in ("engines", "queries", "profiles"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.repeat_count < 1:
            raise ValueError("repeat_count must be >= 1")
        if not self.engines or not self.queries or not self.profiles:
            raise ValueError("a plan needs engines, queries and profiles")
        ids = [p.bot_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError("bot ids must be unique within a plan")
        if self.repeat_count < 2:
            log.info("plan %s runs once; repeat audits are recommended", self.audit_id)


def load_plan(path, base_dir=None) -> AuditPlan:
    """Read a YAML audit plan.

    Keys: audit_id, engines[], queries_path (optional, bundled corpus if
    absent), type3_subset_only, profiles_path, repeat_count,
    delays {inter_query_ms: [lo, hi], typing_ms_per_char: [lo, hi]}, seed,
    retries, workers.
    """
    path = Path(path)
    base = Path(base_dir) if base_dir else path.parent
    with open(path, encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    try:
        qpath = cfg.get("queries_path")
        queries = load_queries(base / qpath if qpath else None)
        if cfg.get("type3_subset_only"):
            queries = [q for q in queries if q.in_type3_subset]
        profiles = load_profiles(base / cfg["profiles_path"])
        delays = cfg.get("delays", {}) or {}
        return AuditPlan(
            audit_id=str(cfg.get("audit_id", path.stem)),
            engines=tuple(cfg["engines"]),
            queries=tuple(queries),
            profiles=tuple(profiles),
            repeat_count=int(cfg.get("repeat_count", 1)),
            inter_query_delay_ms=tuple(delays.get("inter_query_ms", (0, 0))),
            typing_delay_ms=tuple(delays.get("typing_ms_per_char", (0, 0))),
            jitter_seed=int(cfg.get("seed", 0)),
            retries=int(cfg.get("retries", 1)),
            workers=int(cfg.get("workers", 4)),
        )
    except KeyError as exc:
        raise DataError(f"{path}: missing plan key {exc}") from exc


# --- audit execution -------------------------------------------------------------------

_STATUS_FOR = (
    (CaptchaError, Status.CAPTCHA_BLOCKED),
    (ParseError, Status.PARSE_FAILURE),
)


def _dispatch_offsets(plan: AuditPlan, repeat: int, engine: str, query: Query) -> list[int]:
    """Humanized per-bot start offsets (ms) within one wave, capped by the window."""
    lo, hi = plan.typing_delay_ms
    offsets = []
    for p in plan.profiles:
        rng = stable_rng("typing", plan.jitter_seed, repeat, engine, query.text, p.bot_id)
        per_char = rng.uniform(lo, hi) if hi > lo else lo
        offsets.append(min(int(per_char * len(query.text)), plan.window_ms - 1))
    return offsets


def _attempt(client: EngineClient, query: Query, profile: BotProfile, session: Session):
    try:
        rec = client.search(query, profile, session)
        return replace(rec, audit_id=session.audit_id, timestamp_ms=session.timestamp_ms), None
    except EngineUnavailable as exc:
        return None, exc
    except Exception as exc:  # noqa: BLE001 - per-bot failures never abort the audit
        status = next((s for cls, s in _STATUS_FOR if isinstance(exc, cls)), Status.TIMEOUT)
        log.warning("%s %s %r failed: %s", session.engine, profile.bot_id, query.text, exc)
        return SerpRecord.for_profile(
            profile, audit_id=session.audit_id, engine=session.engine, query=query,
            timestamp_ms=session.timestamp_ms, status=status), None


def _run_bot(client, plan, profile, query, audit_id, engine, t_ms, clock):
    records, outage = [], None
    for _ in range(plan.retries + 1):
        ts = clock.wait_until(t_ms)
        session = Session.fresh(profile, audit_id, engine, ts)
        rec, exc = _attempt(client, query, profile, session)
        if exc is not None:
            outage = exc
            records.append(SerpRecord.for_profile(
                profile, audit_id=audit_id, engine=engine, query=query,
                timestamp_ms=ts, status=Status.TIMEOUT))
            break
        records.append(rec)
        if rec.status is Status.OK:
            break
    return records, outage


def run_audit(plan: AuditPlan, clients: Sequence[EngineClient], log_path,
              clock=None) -> Path:
    """Run every (engine, query) wave of ``plan`` and append all attempts to ``log_path``.

    Each repeat is logged under its own audit id ``<audit_id>/r<n>``.
    """
    by_name = {c.name(): c for c in clients}
    missing = [e for e in plan.engines if e not in by_name]
    if missing:
        raise ValueError(f"no client for engine(s) {missing}")
    clock = clock or VirtualClock()
    log_path = Path(log_path)
    log_path.touch()
    down: set[str] = set()
    with ThreadPoolExecutor(max_workers=max(1, plan.workers)) as pool:
        for repeat in range(1, plan.repeat_count + 1):
            audit_id = f"{plan.audit_id}/r{repeat}"
            for engine in plan.engines:
                if engine in down:
                    continue
                client = by_name[engine]
                for query in plan.queries:
                    start = clock.now_ms()
                    offsets = _dispatch_offsets(plan, repeat, engine, query)
                    futures = [
                        pool.submit(_run_bot, client, plan, prof, query, audit_id,
                                    engine, start + off, clock)
                        for prof, off in zip(plan.profiles, offsets)
                    ]
                    outcomes = [f.result() for f in futures]
                    write_serp_log((r for recs, _ in outcomes for r in recs), log_path)
                    lo, hi = plan.inter_query_delay_ms
                    gap = int(stable_rng("gap", plan.jitter_seed, repeat, engine,
                                         query.text).integers(lo, hi + 1)) if hi > lo else lo
                    clock.advance_to(start + max(offsets) + 1 + gap)
                    if all(exc is not None for _, exc in outcomes):
                        log.error("engine %s unavailable; stopping its audit", engine)
                        down.add(engine)
                        break
    return log_path


# --- success rule & balancing ------------------------------------------------------------

@dataclass(frozen=True)
class Exclusion:
    audit_id: str
    engine: str
    location: str
    query_text: str
    reason: str
    qualifying_ips: int


def _cell(rec: SerpRecord) -> tuple:
    return (rec.audit_id, rec.engine, rec.location, rec.query.text)


def success_filter(records: Iterable[SerpRecord], min_urls: int = 4,
                   min_ips: int = 3) -> tuple[list[SerpRecord], list[Exclusion]]:
    """Keep a (location, engine, query) cell only with >= min_ips IPs each giving >= min_urls URLs.

    Cells are evaluated per audit id. Records that do not qualify are removed
    even from kept cells.
    """
    cells: dict[tuple, list[SerpRecord]] = defaultdict(list)
    for r in records:
        cells[_cell(r)].append(r)
    kept, report = [], []
    for key in sorted(cells):
        good = [r for r in cells[key] if r.status is Status.OK and len(r.results) >= min_urls]
        ips = {r.ip_label for r in good}
        if len(ips) >= min_ips:
            # one record per IP: the first qualifying attempt
            seen = set()
            for r in good:
                if r.ip_label not in seen:
                    seen.add(r.ip_label)
                    kept.append(r)
        else:
            reason = (f"insufficient IPs: {len(ips)} of {min_ips} required "
                      f"returned at least {min_urls} URLs")
            report.append(Exclusion(*key[:2], key[2], key[3], reason, len(ips)))
    return kept, report


def _stratum(rec: SerpRecord) -> tuple:
    return rec.location, rec.history_kind.value


def balance(records: Sequence[SerpRecord], seed: int = 0,
            locations: Iterable[str] | None = None) -> list[SerpRecord]:
    """Equalize query categories and bots per location within each engine.

    Queries must have records in every (audit, location) of the engine to
    survive; the larger query category is then subsampled to the smaller.
    Bots are subsampled so every location keeps the same number of bots of
    each history kind.
    """
    by_engine: dict[str, list[SerpRecord]] = defaultdict(list)
    for r in records:
        by_engine[r.engine].append(r)
    out = []
    for engine in sorted(by_engine):
        recs = by_engine[engine]
        locs = sorted({r.location for r in recs})
        for loc in locations or ():
            if loc not in locs:
                raise BalanceError(f"engine {engine}: no surviving bots in location {loc}")
        audits = sorted({r.audit_id for r in recs})
        present: dict[str, set] = defaultdict(set)
        queries: dict[str, Query] = {}
        for r in recs:
            present[r.query.text].add((r.audit_id, r.location))
            queries[r.query.text] = r.query
        need = {(a, l) for a in audits for l in locs}
        survivors = sorted(t for t, cells in present.items() if cells >= need)
        gen = [t for t in survivors if queries[t].category is QueryCategory.GENERAL]
        spec = [t for t in survivors if queries[t].category is QueryCategory.SPECIFIC]
        n_q = min(len(gen), len(spec))
        if n_q == 0:
            log.warning("engine %s: no balanced query set survives", engine)
            continue
        rng = stable_rng("balance-queries", seed, engine)
        keep_q = set()
        for group in (gen, spec):
            idx = sorted(rng.choice(len(group), size=n_q, replace=False))
            keep_q.update(group[i] for i in idx)

        bots: dict[tuple, set] = defaultdict(set)
        for r in recs:
            bots[_stratum(r)].add(r.bot_id)
        kinds = sorted({k for _, k in bots})
        keep_b = set()
        for kind in kinds:
            counts = {loc: len(bots.get((loc, kind), ())) for loc in locs}
            n_b = min(counts.values())
            if n_b == 0:
                empty = [loc for loc, c in counts.items() if c == 0]
                raise BalanceError(
                    f"engine {engine}: no surviving {kind} bots in location(s) {', '.join(empty)}"
                )
            for loc in locs:
                ids = sorted(bots[(loc, kind)])
                pick = stable_rng("balance-bots", seed, engine, loc, kind).choice(
                    len(ids), size=n_b, replace=False)
                keep_b.update(ids[i] for i in pick)
        chosen = [r for r in recs if r.query.text in keep_q and r.bot_id in keep_b]

        cats = defaultdict(set)
        per_loc = defaultdict(set)
        for r in chosen:
            cats[r.query.category].add(r.query.text)
            per_loc[_stratum(r)].add(r.bot_id)
        assert len({len(v) for v in cats.values()}) <= 1, "query categories unbalanced"
        for kind in kinds:
            assert len({len(per_loc[(loc, kind)]) for loc in locs}) == 1, "bots unbalanced"
        out.extend(chosen)
    return out
