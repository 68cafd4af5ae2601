"""
retrieval.py
------------
Inverted index over the target collection (tokenize -> stopwords -> Porter
stem), weighted-term search with pluggable weighting models, and TREC run
files (`query_id Q0 doc_id rank score run_tag`).
"""

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Sequence, Tuple

from src.errors import DuplicateDocIdError, MissingArtifactError, ParseError
from src.textproc import Analyzer, stem

logger = logging.getLogger(__name__)


# =========================
# 1) TYPES
# =========================
@dataclass(frozen=True)
class WeightedQueryTerm:
    term: str
    weight: float = 1.0

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"weight for {self.term!r} must be > 0, got {self.weight}")


@dataclass
class IndexedCollection:
    postings: Dict[str, List[Tuple[str, int]]]
    doc_lengths: Dict[str, int]
    tf_lookup: Dict[str, Dict[str, int]] = field(init=False, repr=False)

    def __post_init__(self):
        self.tf_lookup = {t: dict(p) for t, p in self.postings.items()}

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        return self.total_terms / self.doc_count if self.doc_count else 0.0

    @property
    def total_terms(self) -> int:
        return sum(self.doc_lengths.values())

    def doc_freq(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, doc_id: str) -> int:
        return self.tf_lookup.get(term, {}).get(doc_id, 0)


@dataclass
class RankedList:
    query_id: str
    entries: List[Tuple[str, float, int]] = field(default_factory=list)

    @property
    def doc_ids(self) -> List[str]:
        return [d for d, _, _ in self.entries]

    def __len__(self):
        return len(self.entries)


# =========================
# 2) INDEXING
# =========================
def build_index(documents: Iterable[Tuple[str, str]], analyzer: Analyzer = None) -> IndexedCollection:
    analyzer = (analyzer or Analyzer()).stemmed()
    postings: Dict[str, List[Tuple[str, int]]] = {}
    doc_lengths: Dict[str, int] = {}

    for doc_id, text in documents:
        if doc_id in doc_lengths:
            raise DuplicateDocIdError(f"document id {doc_id!r} appears twice", doc_id=doc_id)
        tokens = analyzer.analyze(text)
        doc_lengths[doc_id] = len(tokens)
        for term, count in Counter(tokens).items():
            postings.setdefault(term, []).append((doc_id, count))

    for plist in postings.values():
        plist.sort()
    logger.info("indexed %d documents, %d terms", len(doc_lengths), len(postings))
    return IndexedCollection(postings=dict(sorted(postings.items())), doc_lengths=doc_lengths)


def save_index(index: IndexedCollection, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "doc_lengths": index.doc_lengths,
        "postings": {t: [[d, n] for d, n in p] for t, p in index.postings.items()},
    }
    path.write_text(json.dumps(payload, ensure_ascii=False, sort_keys=True), encoding="utf-8")
    return path


def load_index(path) -> IndexedCollection:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(f"index {path} not found; run `index` first", path=str(path))
    payload = json.loads(path.read_text(encoding="utf-8"))
    return IndexedCollection(
        postings={t: [(d, int(n)) for d, n in p] for t, p in payload["postings"].items()},
        doc_lengths={d: int(n) for d, n in payload["doc_lengths"].items()},
    )


# -----------------------------
# Collection readers
# -----------------------------
DOC_RE = re.compile(r"<DOC>(.*?)</DOC>", re.S | re.I)
DOCNO_RE = re.compile(r"<DOCNO>\s*(.*?)\s*</DOCNO>", re.S | re.I)
TAG_RE = re.compile(r"<[^>]+>")


def read_trec_sgml(path) -> Iterator[Tuple[str, str]]:
    text = Path(path).read_text(encoding="utf-8", errors="replace")
    for block in DOC_RE.findall(text):
        m = DOCNO_RE.search(block)
        if not m:
            continue
        body = DOCNO_RE.sub(" ", block)
        yield m.group(1), TAG_RE.sub(" ", body)


def read_jsonl_collection(path) -> Iterator[Tuple[str, str]]:
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield str(rec["doc_id"]), rec["text"]
            except (ValueError, KeyError) as e:
                raise ParseError(f"bad collection record: {e}", path=path, line_no=line_no)


def read_collection(path) -> Iterator[Tuple[str, str]]:
    """Directory of text files (doc_id = file name), JSONL {doc_id, text}, or TREC SGML."""
    path = Path(path)
    if path.is_dir():
        for file in sorted(p for p in path.iterdir() if p.is_file()):
            yield file.name, file.read_text(encoding="utf-8", errors="replace")
    elif path.suffix in (".jsonl", ".json"):
        yield from read_jsonl_collection(path)
    else:
        yield from read_trec_sgml(path)


# =========================
# 3) WEIGHTING MODELS
# =========================
MODELS: Dict[str, type] = {}


def register_model(name: str):
    """Class decorator adding a WeightingModel to the registry (DFR models plug in here)."""
    def wrap(cls):
        cls.name = name
        MODELS[name] = cls
        return cls
    return wrap


class WeightingModel:
    name = "base"
    defaults: Dict[str, float] = {}

    def __init__(self, **params):
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise ValueError(f"unknown parameters for {self.name}: {sorted(unknown)}")
        self.params = {**self.defaults, **params}

    def term_score(self, tf: int, doc_len: int, term: str, index: IndexedCollection) -> float:
        raise NotImplementedError

    def score(self, query: Sequence[WeightedQueryTerm], doc_id: str, index: IndexedCollection) -> float:
        doc_len = index.doc_lengths.get(doc_id, 0)
        total = 0.0
        for q in query:
            tf = index.tf(q.term, doc_id)
            if tf:
                total += q.weight * self.term_score(tf, doc_len, q.term, index)
        return total


@register_model("bm25")
class BM25(WeightingModel):
    defaults = {"k1": 1.2, "b": 0.75}

    def term_score(self, tf, doc_len, term, index):
        k1, b = self.params["k1"], self.params["b"]
        df, n = index.doc_freq(term), index.doc_count
        idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
        norm = k1 * (1 - b + b * doc_len / index.avg_doc_length)
        return idf * (tf * (k1 + 1)) / (tf + norm)


@register_model("tfidf")
class TfIdf(WeightingModel):
    def term_score(self, tf, doc_len, term, index):
        return tf * math.log(index.doc_count / index.doc_freq(term))


def get_model(name: str, **params) -> WeightingModel:
    try:
        return MODELS[name.lower()](**params)
    except KeyError:
        raise ValueError(f"unknown weighting model {name!r}; available: {sorted(MODELS)}")


def score_bm25(query: Sequence[WeightedQueryTerm], doc_id: str, index: IndexedCollection,
               k1: float = 1.2, b: float = 0.75) -> float:
    return BM25(k1=k1, b=b).score(query, doc_id, index)


def score_tfidf(query: Sequence[WeightedQueryTerm], doc_id: str, index: IndexedCollection) -> float:
    return TfIdf().score(query, doc_id, index)


# =========================
# 4) SEARCH
# =========================
def analyze_query(terms: Iterable[Tuple[str, float]]) -> List[WeightedQueryTerm]:
    """Stems (term, weight) pairs; terms sharing a stem get their weights summed."""
    merged: Dict[str, float] = {}
    for term, weight in terms:
        s = stem(term)
        merged[s] = merged.get(s, 0.0) + weight
    return [WeightedQueryTerm(t, w) for t, w in merged.items()]


def search(query_id: str, query: Sequence[WeightedQueryTerm], index: IndexedCollection,
           model: WeightingModel = None, r_max: int = 1000) -> RankedList:
    """Scores every document holding a query term; score desc, doc_id asc, cut at r_max."""
    model = model or BM25()
    candidates = set()
    for q in query:
        candidates.update(d for d, _ in index.postings.get(q.term, ()))

    scored = [(d, model.score(query, d, index)) for d in candidates]
    scored.sort(key=lambda x: (-x[1], x[0]))
    entries = [(d, s, rank) for rank, (d, s) in enumerate(scored[:r_max], 1)]
    return RankedList(query_id=query_id, entries=entries)


# =========================
# 5) RUN FILES
# =========================
def write_run(ranked_lists: Iterable[RankedList], run_tag: str, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for rl in sorted(ranked_lists, key=lambda r: r.query_id):
            for doc_id, score, rank in rl.entries:
                f.write(f"{rl.query_id} Q0 {doc_id} {rank} {score:.6f} {run_tag}\n")
    return path


def read_run(path) -> Dict[str, RankedList]:
    runs: Dict[str, RankedList] = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(f"expected 6 columns, got {len(parts)}", path=path, line_no=line_no)
            qid, _, doc_id, rank, score, _ = parts
            try:
                entry = (doc_id, float(score), int(rank))
            except ValueError:
                raise ParseError("rank/score not numeric", path=path, line_no=line_no)
            runs.setdefault(qid, RankedList(qid)).entries.append(entry)
    for rl in runs.values():
        rl.entries.sort(key=lambda e: (e[2], -e[1], e[0]))
    return runs
