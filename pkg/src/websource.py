"""
websource.py
------------
Pseudo-relevant page acquisition: result lists per (query, engine), URL
blocklisting, DOM-block text extraction and JSONL snapshots.

Snapshot record schema (one JSON object per line, sorted by query_id, engine, rank):
  {"query_id": str, "engine": str, "rank": int, "url": str,
   "fetched_at": ISO-8601 UTC, "text": str, "html": str|null}

Snapshot metadata lives in a sidecar file ``<snapshot>.meta.json``.
"""

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from itertools import combinations
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple
from urllib.parse import urlparse

import requests
from bs4 import BeautifulSoup, Comment, UnicodeDammit
from pydantic import BaseModel, Field

from src.config import FetchSettings
from src.errors import (
    EmptyResultError,
    MissingEngineDataError,
    ParseError,
    ProviderUnreachableError,
    UndecodableContentError,
)
from src.textproc import DATA_DIR

logger = logging.getLogger(__name__)

DEFAULT_BLOCKLIST = DATA_DIR / "blocklist.txt"


# =========================
# 1) RECORD TYPES
# =========================
class SerpEntry(BaseModel):
    query_id: str
    engine: str
    rank: int = Field(ge=1)
    url: str

    def sort_key(self):
        return (self.query_id, self.engine, self.rank)


class WebDocument(BaseModel):
    entry: SerpEntry
    extracted_text: str = ""
    fetched_at: datetime
    html: Optional[str] = None

    @property
    def doc_id(self) -> str:
        e = self.entry
        return f"{e.query_id}:{e.engine}:{e.rank}"

    def to_record(self) -> dict:
        e = self.entry
        return {
            "query_id": e.query_id,
            "engine": e.engine,
            "rank": e.rank,
            "url": e.url,
            "fetched_at": _iso(self.fetched_at),
            "text": self.extracted_text,
            "html": self.html,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "WebDocument":
        return cls(
            entry=SerpEntry(query_id=rec["query_id"], engine=rec["engine"], rank=rec["rank"], url=rec["url"]),
            extracted_text=rec.get("text") or "",
            fetched_at=_parse_iso(rec["fetched_at"]),
            html=rec.get("html"),
        )


class SnapshotMeta(BaseModel):
    created_at: datetime
    provider: str
    n_requested: int
    queries: Dict[str, str] = Field(default_factory=dict)


class Snapshot(BaseModel):
    entries: List[WebDocument] = Field(default_factory=list)
    metadata: SnapshotMeta

    def sorted(self) -> "Snapshot":
        return Snapshot(entries=sorted(self.entries, key=lambda d: d.entry.sort_key()), metadata=self.metadata)

    def documents(self, query_id: str, engine: str) -> List[WebDocument]:
        docs = [d for d in self.entries if d.entry.query_id == query_id and d.entry.engine == engine]
        return sorted(docs, key=lambda d: d.entry.rank)

    def keys(self) -> set:
        return {(d.entry.query_id, d.entry.engine, d.entry.url) for d in self.entries}


def _iso(ts: datetime) -> str:
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _parse_iso(value: str) -> datetime:
    return datetime.strptime(value, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def utc_now() -> datetime:
    return datetime.now(timezone.utc).replace(microsecond=0)


# =========================
# 2) SNAPSHOT FILES
# =========================
def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.json")


def _dump(obj) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def write_snapshot(snapshot: Snapshot, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    snap = snapshot.sorted()
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for doc in snap.entries:
            f.write(_dump(doc.to_record()) + "\n")

    meta = snap.metadata
    with open(meta_path(path), "w", encoding="utf-8", newline="\n") as f:
        f.write(_dump({
            "created_at": _iso(meta.created_at),
            "provider": meta.provider,
            "n_requested": meta.n_requested,
            "queries": meta.queries,
        }) + "\n")
    logger.info("wrote %d snapshot records to %s", len(snap.entries), path)
    return path


def read_snapshot(path) -> Snapshot:
    path = Path(path)
    if not path.exists():
        raise ParseError(f"snapshot {path} not found", path=path)

    entries = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entries.append(WebDocument.from_record(json.loads(line)))
            except (ValueError, KeyError) as e:
                raise ParseError(f"bad snapshot record: {e}", path=path, line_no=line_no)

    mp = meta_path(path)
    if mp.exists():
        raw = json.loads(mp.read_text(encoding="utf-8"))
        meta = SnapshotMeta(
            created_at=_parse_iso(raw["created_at"]),
            provider=raw.get("provider", "snapshot"),
            n_requested=raw.get("n_requested", 0),
            queries=raw.get("queries", {}),
        )
    else:
        meta = SnapshotMeta(created_at=utc_now(), provider="snapshot", n_requested=0)
    return Snapshot(entries=entries, metadata=meta).sorted()


# =========================
# 3) RESULT PROVIDERS
# =========================
class SnapshotProvider:
    """Replays the stored result lists of a snapshot."""

    name = "snapshot"

    def __init__(self, snapshot: Snapshot):
        self.snapshot = snapshot
        self._by_text = {text: qid for qid, text in snapshot.metadata.queries.items()}

    def results(self, query_id: Optional[str], query: str, engine: str) -> List[str]:
        qid = query_id or self._by_text.get(query, query)
        return [d.entry.url for d in self.snapshot.documents(qid, engine)]


class UrlListProvider:
    """Reads `query_id <TAB> engine <TAB> rank <TAB> url` lines."""

    name = "urllist"

    def __init__(self, path, queries: Dict[str, str] = None):
        self.path = Path(path)
        self._by_text = {text: qid for qid, text in (queries or {}).items()}
        self._lists: Dict[Tuple[str, str], List[Tuple[int, str]]] = {}
        with open(self.path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, 1):
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ParseError("expected 4 tab-separated fields", path=self.path, line_no=line_no)
                qid, engine, rank, url = parts
                try:
                    rank = int(rank)
                except ValueError:
                    raise ParseError(f"bad rank {rank!r}", path=self.path, line_no=line_no)
                self._lists.setdefault((qid, engine), []).append((rank, url.strip()))

    def results(self, query_id: Optional[str], query: str, engine: str) -> List[str]:
        qid = query_id or self._by_text.get(query, query)
        return [url for _, url in sorted(self._lists.get((qid, engine), []))]


class SearchApiProvider:
    """SearchAPI-style JSON endpoint; the engine id is passed through as the `engine` parameter."""

    name = "api"

    def __init__(self, settings: FetchSettings, session: requests.Session = None):
        self.settings = settings
        self.session = session or requests.Session()
        self.api_key = os.environ.get(settings.api_key_env)

    def results(self, query_id: Optional[str], query: str, engine: str) -> List[str]:
        if not self.api_key:
            raise ProviderUnreachableError(f"no API key in ${self.settings.api_key_env}")
        params = {"engine": engine, "q": query, "api_key": self.api_key}
        try:
            response = self.session.get(self.settings.api_endpoint, params=params, timeout=self.settings.timeout)
            response.raise_for_status()
            payload = response.json()
        except (requests.RequestException, ValueError) as e:
            raise ProviderUnreachableError(f"{engine} search failed for {query!r}: {e}")
        return [r["link"] for r in payload.get("organic_results", []) if r.get("link")]


def acquire_serp(query: str, engine: str, n: int, provider, query_id: Optional[str] = None) -> List[SerpEntry]:
    """Top-n result URLs for one (query, engine), ranked 1..len in provider order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    urls = provider.results(query_id, query, engine)
    if not urls:
        raise EmptyResultError(f"no URLs for query {query!r} on {engine}", engine=engine)
    qid = query_id or query
    return [SerpEntry(query_id=qid, engine=engine, rank=i, url=u) for i, u in enumerate(urls[:n], 1)]


# =========================
# 4) BLOCKLIST
# =========================
class Blocklist(BaseModel):
    domain_patterns: List[str] = Field(default_factory=list)

    def matches(self, url: str) -> bool:
        host = (urlparse(url).hostname or "").lower().rstrip(".")
        for pattern in self.domain_patterns:
            p = pattern.lower().lstrip(".")
            if host == p or host.endswith("." + p):
                return True
        return False


def load_blocklist(path=None, include_default: bool = True) -> Blocklist:
    patterns = []
    files = ([DEFAULT_BLOCKLIST] if include_default else []) + ([Path(path)] if path else [])
    for file in files:
        with open(file, "r", encoding="utf-8") as f:
            for line in f:
                line = line.split("#", 1)[0].strip()
                if line and line not in patterns:
                    patterns.append(line)
    return Blocklist(domain_patterns=patterns)


def filter_urls(entries: Sequence[SerpEntry], blocklist: Blocklist) -> List[SerpEntry]:
    """Drops blocklisted hosts and re-ranks survivors per (query_id, engine) from 1."""
    kept = []
    next_rank: Dict[Tuple[str, str], int] = {}
    for e in entries:
        if blocklist.matches(e.url):
            logger.debug("blocked %s (%s/%s rank %d)", e.url, e.query_id, e.engine, e.rank)
            continue
        key = (e.query_id, e.engine)
        rank = next_rank.get(key, 1)
        next_rank[key] = rank + 1
        kept.append(e.model_copy(update={"rank": rank}))
    return kept


# =========================
# 5) TEXT EXTRACTION
# =========================
BLOCK_TAGS = ["p", "h1", "h2", "h3", "h4", "h5", "h6", "table", "ul", "ol", "li"]
DROP_TAGS = ["script", "style", "noscript", "form", "nav", "footer", "template", "iframe", "svg"]
MARKUP_RE = re.compile(r"<(?=[a-zA-Z/!])")


def _decode(raw_html) -> str:
    if isinstance(raw_html, str):
        return raw_html
    head = raw_html[:1024]
    if b"\x00" in head or head.startswith(b"%PDF") or head.startswith(b"\x89PNG"):
        raise UndecodableContentError("binary payload")
    dammit = UnicodeDammit(raw_html, ["utf-8", "windows-1252"])
    if dammit.unicode_markup is None:
        raise UndecodableContentError("could not detect a text encoding")
    return dammit.unicode_markup


def _own_strings(block) -> list:
    """Strings whose nearest enclosing block is `block` itself."""
    return [s for s in block.find_all(string=True) if s.find_parent(BLOCK_TAGS) is block]


def _anchor_only(strings) -> bool:
    if not any(s.find_parent("a") is not None for s in strings):
        return False
    outside = "".join(s for s in strings if s.find_parent("a") is None)
    return not outside.strip()


def extract_text(raw_html) -> str:
    """
    Text of P, H1-H6, TABLE and UL/OL/LI blocks, one line per block in document order.
    A block contributes only its own text; text inside a nested block goes to that block's line.
    """
    soup = BeautifulSoup(_decode(raw_html), "html.parser")
    for tag in soup.find_all(DROP_TAGS):
        tag.decompose()
    for comment in soup.find_all(string=lambda s: isinstance(s, Comment)):
        comment.extract()

    lines = []
    for block in soup.find_all(BLOCK_TAGS):
        strings = _own_strings(block)
        if _anchor_only(strings):
            continue
        sep = " " if block.name == "table" else ""
        text = " ".join(sep.join(strings).split())
        if text:
            lines.append(MARKUP_RE.sub("< ", text))
    return "\n".join(lines)


# =========================
# 6) FETCHING
# =========================
Fetcher = Callable[[str], Tuple[bytes, str]]


def requests_fetcher(settings: FetchSettings, session: requests.Session = None) -> Fetcher:
    session = session or requests.Session()
    session.headers.setdefault("User-Agent", "Mozilla/5.0 (compatible; wkqe/1.0)")

    def fetch(url: str) -> Tuple[bytes, str]:
        response = session.get(url, timeout=settings.timeout)
        response.raise_for_status()
        return response.content, response.headers.get("Content-Type", "text/html")

    return fetch


class _HostThrottle:
    """Keeps at least `delay` seconds between two requests to one host."""

    def __init__(self, delay: float):
        self.delay = delay
        self.lock = threading.Lock()
        self.next_slot: Dict[str, float] = {}

    def wait(self, url: str):
        if self.delay <= 0:
            return
        host = urlparse(url).hostname or ""
        with self.lock:
            now = time.monotonic()
            slot = max(now, self.next_slot.get(host, now))
            self.next_slot[host] = slot + self.delay
        if slot > now:
            time.sleep(slot - now)


def _is_html(content_type: str) -> bool:
    ct = (content_type or "").split(";")[0].strip().lower()
    return ct in ("", "text/html", "application/xhtml+xml", "text/plain", "application/xml", "text/xml")


def fetch_documents(entries: Sequence[SerpEntry], settings: FetchSettings = None,
                    fetcher: Fetcher = None, keep_html: bool = True) -> List[WebDocument]:
    """
    Downloads and extracts every entry with a bounded thread pool. Failed,
    non-HTML or empty pages are skipped with a warning. The result is in
    (query_id, engine, rank) order whatever the completion order.
    """
    settings = settings or FetchSettings()
    fetcher = fetcher or requests_fetcher(settings)
    throttle = _HostThrottle(settings.politeness_delay)

    def work(entry: SerpEntry) -> Optional[WebDocument]:
        body, content_type = None, ""
        for attempt in range(settings.retries + 1):
            throttle.wait(entry.url)
            try:
                body, content_type = fetcher(entry.url)
                break
            except Exception as e:
                logger.warning("fetch %s failed (attempt %d): %s", entry.url, attempt + 1, e)
        if body is None:
            return None
        if not _is_html(content_type):
            logger.warning("skipping non-HTML %s (%s)", entry.url, content_type)
            return None
        try:
            html = _decode(body)
            text = extract_text(html)
        except UndecodableContentError as e:
            logger.warning("skipping %s: %s", entry.url, e)
            return None
        if not text.strip():
            logger.warning("no text extracted from %s", entry.url)
            return None
        return WebDocument(entry=entry, extracted_text=text, fetched_at=utc_now(), html=html if keep_html else None)

    with ThreadPoolExecutor(max_workers=settings.max_in_flight) as pool:
        results = list(pool.map(work, entries))
    docs = [d for d in results if d is not None]
    return sorted(docs, key=lambda d: d.entry.sort_key())


# =========================
# 7) CORPUS ASSEMBLY
# =========================
def build_corpus(snapshot: Snapshot, query_id: str, engines: Iterable[str], n_docs: int,
                 dedup: bool = False) -> List[WebDocument]:
    """
    Union of the top n_docs pages per engine, in (engine order, rank) order.
    Pages returned by several engines stay separate documents unless dedup is set.
    A repeated engine id counts once.
    """
    corpus, seen = [], set()
    for engine in dict.fromkeys(engines):
        docs = [d for d in snapshot.documents(query_id, engine) if d.extracted_text.strip()]
        if not docs:
            raise MissingEngineDataError(f"snapshot has no pages for query {query_id} on {engine}",
                                         query_id=query_id, engine=engine)
        for doc in docs[:n_docs]:
            if dedup:
                if doc.entry.url in seen:
                    continue
                seen.add(doc.entry.url)
            corpus.append(doc)
    return corpus


VARIANT_LETTERS = {"google": "G", "bing": "B", "duckduckgo": "D"}


def variant_name(engines: Sequence[str], all_engines: Sequence[str] = None) -> str:
    """GQE, GBQE, GBDQE, ... for an engine combination."""
    order = list(all_engines or engines)
    ordered = sorted(engines, key=lambda e: order.index(e) if e in order else len(order))
    return "".join(VARIANT_LETTERS.get(e, e[:1].upper()) for e in ordered) + "QE"


def engine_combinations(engines: Sequence[str]) -> List[List[str]]:
    """All non-empty subsets, singles first then pairs, ..., in configured order."""
    combos = []
    for size in range(1, len(engines) + 1):
        combos.extend(list(c) for c in combinations(engines, size))
    return combos
