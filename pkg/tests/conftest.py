"""
Deterministic miniature experiment: topics, a three-engine web snapshot, a
target collection with qrels, and the url list / pages a fake fetcher serves.

Every vocabulary word is a made-up CVCVC token ending in k/x/p, so none is a
stopword and the Porter stemmer leaves all of them unchanged.
"""

import json
import os
import sys
from datetime import datetime, timezone
from itertools import product
from types import SimpleNamespace

import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from src.websource import SerpEntry, Snapshot, SnapshotMeta, WebDocument, extract_text, write_snapshot  # noqa: E402

ENGINES = ["google", "bing", "duckduckgo"]
N_TOPICS = 5
PAGES_PER_ENGINE = 20
FETCHED_AT = datetime(2024, 3, 1, 12, 0, 0, tzinfo=timezone.utc)


def pseudo_words(n):
    words = ("".join(p) for p in product("bdfgklmnprtvz", "aeiou", "bdfgklmnprtvz", "aeiou", "kxp"))
    return [next(words) for _ in range(n)]


WORDS = pseudo_words(170)
QUERY_WORDS = [WORDS[2 * t: 2 * t + 2] for t in range(N_TOPICS)]
TOPIC_VOCAB = [WORDS[10 + 12 * t: 22 + 12 * t] for t in range(N_TOPICS)]
NOISE = WORDS[70:130]
FILLER = WORDS[130:170]


def topic_id(t):
    return f"{401 + t}"


def topic_title(t):
    q1, q2 = QUERY_WORDS[t]
    return f"the {q1} of {q2}"


def page_url(t, engine, rank):
    return f"https://site{t}-{engine}-{rank}.example.org/page.html"


def page_html(t, engine_idx, rank_idx):
    """Query terms x2, six topic words x2, twelve noise words x1, plus boilerplate."""
    q1, q2 = QUERY_WORDS[t]
    g = engine_idx * PAGES_PER_ENGINE + rank_idx
    topic = [TOPIC_VOCAB[t][(g * 5 + i) % 12] for i in range(6)]
    noise = [NOISE[(g * 4 + i) % 60] for i in range(12)]
    return (
        "<html><head><title>page</title><script>var scriptword = 1;</script></head><body>"
        "<nav><a href='/'>menuword</a></nav>"
        f"<h1>{q1} {q2}</h1>"
        f"<p>The {q1} and the {q2} with {' '.join(topic)} {' '.join(topic)}.</p>"
        f"<ul><li>{' '.join(noise[:6])}</li><li>{' '.join(noise[6:])}</li></ul>"
        "<footer>footerword</footer></body></html>"
    )


def web_pages():
    """{url: html} for every (topic, engine, rank)."""
    pages = {}
    for t in range(N_TOPICS):
        for e, engine in enumerate(ENGINES):
            for r in range(PAGES_PER_ENGINE):
                pages[page_url(t, engine, r + 1)] = page_html(t, e, r)
    return pages


def build_snapshot():
    entries = []
    for t in range(N_TOPICS):
        for e, engine in enumerate(ENGINES):
            for r in range(PAGES_PER_ENGINE):
                html = page_html(t, e, r)
                entry = SerpEntry(query_id=topic_id(t), engine=engine, rank=r + 1, url=page_url(t, engine, r + 1))
                entries.append(WebDocument(entry=entry, extracted_text=extract_text(html), fetched_at=FETCHED_AT, html=html))
    meta = SnapshotMeta(created_at=FETCHED_AT, provider="urllist", n_requested=PAGES_PER_ENGINE,
                        queries={topic_id(t): topic_title(t) for t in range(N_TOPICS)})
    return Snapshot(entries=entries, metadata=meta)


def build_collection():
    """
    Per topic: 4 relevant docs with both query terms and topic words, 2 relevant
    docs with topic words only, and 4 judged non-relevant docs with one query term.
    """
    docs, qrels = [], []
    for t in range(N_TOPICS):
        qid = topic_id(t)
        q1, q2 = QUERY_WORDS[t]
        vocab = TOPIC_VOCAB[t]
        for i in range(4):
            text = " ".join([q1, q2] + vocab[i: i + 5] + FILLER[(8 * t + i) % 40: (8 * t + i) % 40 + 6])
            docs.append((f"{qid}-rel{i}", text))
            qrels.append((qid, f"{qid}-rel{i}", 1))
        for i in range(2):
            text = " ".join(vocab[6 + i: 11 + i] + FILLER[(8 * t + 3 * i) % 34: (8 * t + 3 * i) % 34 + 6])
            docs.append((f"{qid}-hid{i}", text))
            qrels.append((qid, f"{qid}-hid{i}", 1))
        for i in range(4):
            term = q1 if i < 2 else q2
            text = " ".join([term] + FILLER[(5 * t + 4 * i) % 32: (5 * t + 4 * i) % 32 + 8])
            docs.append((f"{qid}-non{i}", text))
            qrels.append((qid, f"{qid}-non{i}", 0))
    return docs, qrels


def write_workspace(root):
    root.mkdir(parents=True, exist_ok=True)
    topics = root / "topics.tsv"
    topics.write_text("".join(f"{topic_id(t)}\t{topic_title(t)}\n" for t in range(N_TOPICS)), encoding="utf-8")

    snapshot = write_snapshot(build_snapshot(), root / "snapshot.jsonl")

    docs, qrels = build_collection()
    collection = root / "collection.jsonl"
    collection.write_text("".join(json.dumps({"doc_id": d, "text": x}) + "\n" for d, x in docs), encoding="utf-8")
    qrels_path = root / "qrels.txt"
    qrels_path.write_text("".join(f"{q} 0 {d} {g}\n" for q, d, g in qrels), encoding="utf-8")

    urllist = root / "urllist.tsv"
    lines = []
    for t in range(N_TOPICS):
        for engine in ENGINES:
            lines.append(f"{topic_id(t)}\t{engine}\t0\thttps://www.youtube.com/watch?v={t}\n")
            for r in range(PAGES_PER_ENGINE):
                lines.append(f"{topic_id(t)}\t{engine}\t{r + 1}\t{page_url(t, engine, r + 1)}\n")
    urllist.write_text("".join(lines), encoding="utf-8")

    out_dir = root / "output"
    config = {
        "paths": {
            "snapshot": str(snapshot),
            "collection": str(collection),
            "index": str(out_dir / "index.json"),
            "topics": str(topics),
            "qrels": str(qrels_path),
            "out_dir": str(out_dir),
        },
        "fetch": {"provider": "urllist", "urllist_path": str(urllist), "politeness_delay": 0, "retries": 0},
    }
    config_path = root / "config.json"
    config_path.write_text(json.dumps(config, indent=2), encoding="utf-8")

    return SimpleNamespace(
        root=root, topics=topics, snapshot=snapshot, collection=collection, qrels=qrels_path,
        urllist=urllist, out_dir=out_dir, config=config_path, config_data=config,
    )


@pytest.fixture
def workspace(tmp_path):
    return write_workspace(tmp_path / "experiment")


@pytest.fixture(scope="session")
def snapshot():
    return build_snapshot()


@pytest.fixture
def fake_fetcher():
    """Serves the fixture pages; records every URL requested."""
    pages = web_pages()

    class FakeFetcher:
        def __init__(self):
            self.calls = []

        def __call__(self, url):
            self.calls.append(url)
            if url not in pages:
                raise IOError(f"404 {url}")
            return pages[url].encode("utf-8"), "text/html; charset=utf-8"

    return FakeFetcher()
