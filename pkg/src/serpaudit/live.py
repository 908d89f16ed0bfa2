"""HTML client for real search engines.

Engine specifics live in selector files (``data/selectors/<engine>.json``):
the search URL template, the element holding one organic result, the link,
title and snippet elements inside it, and phrases that mark a CAPTCHA page.
Selectors are ``tag``, ``tag.class`` or ``.class``. Requests go through
``PROXY_URL`` when it is set (or through the bot's own proxy).
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass
from html.parser import HTMLParser
from importlib import resources
from pathlib import Path

from .crawler import CaptchaError, EngineClient, EngineUnavailable, ParseError, Session
from .model import BotProfile, Query, RankedResult, SerpRecord, Status

DEFAULT_UA = ("Mozilla/5.0 (X11; Linux x86_64; rv:128.0) Gecko/20100101 Firefox/128.0")


@dataclass(frozen=True)
class Selectors:
    engine: str
    search_url: str              # with {q} and optional {lang}
    result: str
    link: str
    title: str
    snippet: str
    captcha_markers: tuple[str, ...] = ()
    max_results: int = 10

    @classmethod
    def load(cls, path_or_name) -> "Selectors":
        p = Path(str(path_or_name))
        if p.suffix == ".json" and p.exists():
            raw = json.loads(p.read_text("utf-8"))
        else:
            res = resources.files("serpaudit.data") / "selectors" / f"{path_or_name}.json"
            raw = json.loads(res.read_text("utf-8"))
        raw["captcha_markers"] = tuple(raw.get("captcha_markers", ()))
        return cls(**raw)


def _match(sel: str, tag: str, attrs: dict) -> bool:
    want_tag, _, want_cls = sel.partition(".")
    if want_tag and want_tag != tag:
        return False
    if want_cls and want_cls not in (attrs.get("class") or "").split():
        return False
    return True


class _ResultParser(HTMLParser):
    """Collects (href, title, snippet) per result element; nesting is tracked by depth."""

    def __init__(self, sel: Selectors):
        super().__init__(convert_charrefs=True)
        self.sel = sel
        self.items: list[dict] = []
        self._depth = 0
        self._result_depth = None
        self._field = None
        self._field_depth = None

    def handle_starttag(self, tag, attrs):
        a = dict(attrs)
        self._depth += 1
        if self._result_depth is None:
            if _match(self.sel.result, tag, a):
                self._result_depth = self._depth
                self.items.append({"href": None, "title": "", "snippet": ""})
            return
        cur = self.items[-1]
        if cur["href"] is None and _match(self.sel.link, tag, a) and a.get("href"):
            cur["href"] = a["href"]
        if self._field is None:
            for name in ("title", "snippet"):
                if _match(getattr(self.sel, name), tag, a):
                    self._field, self._field_depth = name, self._depth
                    break

    def handle_endtag(self, tag):
        if self._field is not None and self._depth == self._field_depth:
            self._field = None
        if self._result_depth is not None and self._depth == self._result_depth:
            self._result_depth = None
        self._depth -= 1

    def handle_data(self, data):
        if self._field is not None and self.items:
            self.items[-1][self._field] += data


def parse_results(html_text: str, sel: Selectors) -> list[tuple[str, str, str]]:
    p = _ResultParser(sel)
    p.feed(html_text)
    p.close()
    out, seen = [], set()
    for it in p.items:
        href = it["href"]
        if not href or not href.startswith(("http://", "https://")) or href in seen:
            continue
        seen.add(href)
        out.append((href, " ".join(it["title"].split()), " ".join(it["snippet"].split())))
        if len(out) == sel.max_results:
            break
    return out


class LiveEngineClient(EngineClient):
    def __init__(self, selectors: Selectors, timeout: float = 20.0, user_agent: str = DEFAULT_UA):
        self.sel = selectors
        self.timeout = timeout
        self.user_agent = user_agent

    def name(self) -> str:
        return self.sel.engine

    def _opener(self, profile: BotProfile):
        proxy = profile.proxy_url or os.environ.get("PROXY_URL")
        handlers = [urllib.request.ProxyHandler({"http": proxy, "https": proxy})] if proxy else []
        return urllib.request.build_opener(*handlers)

    def _get(self, url: str, profile: BotProfile, session: Session) -> str:
        headers = {"User-Agent": self.user_agent,
                   "Accept-Language": f"{profile.language},en;q=0.5"}
        host = urllib.parse.urlsplit(url).hostname or ""
        cookie = "; ".join(f"{n}={v}" for (n, d), v in sorted(session.cookies.items())
                           if host == d or host.endswith("." + d.lstrip(".")))
        if cookie:
            headers["Cookie"] = cookie
        req = urllib.request.Request(url, headers=headers)
        try:
            with self._opener(profile).open(req, timeout=self.timeout) as resp:
                for raw in resp.headers.get_all("Set-Cookie") or ():
                    name, _, rest = raw.partition("=")
                    session.set_cookie(name.strip(), rest.split(";", 1)[0], host)
                return resp.read().decode(resp.headers.get_content_charset() or "utf-8", "replace")
        except urllib.error.HTTPError as exc:
            if exc.code in (403, 429):
                raise CaptchaError(f"{self.name()} answered HTTP {exc.code}") from exc
            if exc.code >= 500:
                raise EngineUnavailable(f"{self.name()} answered HTTP {exc.code}") from exc
            raise

    def search(self, query: Query, profile: BotProfile, session: Session) -> SerpRecord:
        url = self.sel.search_url.format(q=urllib.parse.quote_plus(query.text),
                                         lang=profile.language)
        page = self._get(url, profile, session)
        low = page.lower()
        if any(m.lower() in low for m in self.sel.captcha_markers):
            raise CaptchaError(f"{self.name()} served a challenge page")
        found = parse_results(page, self.sel)
        if not found:
            raise ParseError(f"{self.name()}: no organic results matched the selectors")
        results = [RankedResult(i, u, title=t, snippet=s)
                   for i, (u, t, s) in enumerate(found, start=1)]
        return SerpRecord.for_profile(profile, audit_id=session.audit_id, engine=self.name(),
                                      query=query, timestamp_ms=session.timestamp_ms,
                                      results=results, status=Status.OK)

    def fetch_page(self, url: str, profile: BotProfile, session: Session) -> str:
        return self._get(url, profile, session)
