"""
expansion.py
------------
Expansion-term scoring over the combined pseudo-relevant corpus C:

  tf-itf        Score(t)   = tf(t, C) * ln(T / |t|)
  doc weight    w(t, j)    = tf(t, j) * ln(T / |DT_j|)
  correlation   c(a, b)    = sum_j w(a, j) * w(b, j)
  cosine        sim(a, b)  = c(a, b) / sqrt(c(a, a) * c(b, b))
  query corr.   C(t, Q)    = (1 / |Q|) * sum_{q in Q} c(t, q)

Pipeline: corpus -> stats -> top-M by tf-itf -> iterative kNN -> query
correlation -> top-n. Every ranking sorts by score descending, then term
ascending.
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import ExpansionConfig, KnnParams
from src.errors import (
    EmptyCorpusError,
    InsufficientTermsError,
    UnknownDocumentError,
    UnknownTermError,
    WKQEError,
    ZeroVectorError,
)
from src.textproc import Analyzer
from src.websource import Snapshot, WebDocument, build_corpus

logger = logging.getLogger(__name__)


# =========================
# 1) TYPES
# =========================
class Stage(str, Enum):
    TF_ITF = "tf_itf"
    COSINE = "cosine"
    CORRELATION = "correlation"


@dataclass(frozen=True)
class ScoredTerm:
    term: str
    score: float
    stage: Stage


@dataclass
class Corpus:
    """
    Term statistics of C. `tf` is a (documents x terms) count matrix whose
    columns follow `terms` (sorted) and rows follow `doc_ids`.
    """
    doc_ids: List[str]
    terms: List[str]
    tf: np.ndarray
    term_index: Dict[str, int] = field(init=False)
    doc_index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.tf = np.asarray(self.tf, dtype=np.int64)
        self.term_index = {t: i for i, t in enumerate(self.terms)}
        self.doc_index = {d: i for i, d in enumerate(self.doc_ids)}
        self._weights = None

    @property
    def total_tokens(self) -> int:
        return int(self.tf.sum())

    @property
    def term_totals(self) -> np.ndarray:
        return self.tf.sum(axis=0)

    @property
    def distinct_terms(self) -> np.ndarray:
        return (self.tf > 0).sum(axis=1)

    def term_total(self, term: str) -> int:
        return int(self.tf[:, self._col(term)].sum())

    def _col(self, term: str) -> int:
        try:
            return self.term_index[term]
        except KeyError:
            raise UnknownTermError(f"term {term!r} does not occur in the corpus", term=term)

    def _row(self, doc_id: str) -> int:
        try:
            return self.doc_index[doc_id]
        except KeyError:
            raise UnknownDocumentError(f"document {doc_id!r} is not in the corpus", doc_id=doc_id)

    @property
    def weights(self) -> np.ndarray:
        """w(t, j) for every document and term."""
        if self._weights is None:
            itf = np.log(self.total_tokens / self.distinct_terms)
            self._weights = self.tf * itf[:, None]
        return self._weights

    def vector(self, term: str) -> np.ndarray:
        return self.weights[:, self._col(term)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.tf, index=self.doc_ids, columns=self.terms)


@dataclass(frozen=True)
class Query:
    id: str
    terms: Tuple[str, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError(f"query {self.id} has no terms")

    @classmethod
    def from_text(cls, query_id: str, text: str, analyzer: Analyzer) -> "Query":
        terms = []
        for t in analyzer.analyze(text):
            if t not in terms:
                terms.append(t)
        return cls(id=query_id, terms=tuple(terms))


@dataclass
class ExpandedQuery:
    original: Query
    expansion: List[Tuple[str, float]]
    provenance: ExpansionConfig

    def terms(self) -> List[str]:
        return [t for t, _ in self.expansion]

    def to_record(self) -> dict:
        return {
            "query_id": self.original.id,
            "original_terms": list(self.original.terms),
            "expansion": [[t, round(float(s), 10)] for t, s in self.expansion],
            "config": self.provenance.model_dump(mode="json"),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ExpandedQuery":
        return cls(
            original=Query(id=rec["query_id"], terms=tuple(rec["original_terms"])),
            expansion=[(t, float(s)) for t, s in rec["expansion"]],
            provenance=ExpansionConfig.model_validate(rec["config"]),
        )


def _ranked(scores: Mapping[str, float]) -> List[Tuple[str, float]]:
    return sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))


# =========================
# 2) CORPUS STATISTICS
# =========================
def build_stats(docs: Sequence[WebDocument], analyzer: Analyzer) -> Corpus:
    """Tokenizes every document (no stemming on this side) into a Corpus."""
    if not docs:
        raise EmptyCorpusError("no documents to build a corpus from")

    counts, doc_ids = [], []
    for doc in docs:
        tokens = analyzer.analyze(doc.extracted_text)
        if not tokens:
            logger.warning("document %s has no usable tokens; left out of the corpus", doc.doc_id)
            continue
        counts.append(pd.Series(tokens).value_counts())
        doc_ids.append(doc.doc_id)

    if not counts:
        raise EmptyCorpusError("no usable text in the pseudo-relevant documents")

    frame = pd.DataFrame(counts).fillna(0).astype(np.int64)
    frame = frame.reindex(sorted(frame.columns), axis=1)
    return Corpus(doc_ids=doc_ids, terms=list(frame.columns), tf=frame.to_numpy())


# =========================
# 3) TF-ITF
# =========================
def tf_itf(term: str, corpus: Corpus) -> float:
    f = corpus.term_total(term)
    return f * math.log(corpus.total_tokens / f)


def tf_itf_scores(corpus: Corpus, log=np.log) -> Dict[str, float]:
    totals = corpus.term_totals
    scores = totals * log(corpus.total_tokens / totals)
    return dict(zip(corpus.terms, scores.tolist()))


def rank_by_tf_itf(corpus: Corpus, m: int, log=np.log) -> List[ScoredTerm]:
    """C_exp: the top m terms by tf-itf."""
    ranked = _ranked(tf_itf_scores(corpus, log))[:m]
    return [ScoredTerm(t, s, Stage.TF_ITF) for t, s in ranked]


# =========================
# 4) DOCUMENT WEIGHTS + TERM SIMILARITY
# =========================
def doc_weight(term: str, doc_id: str, corpus: Corpus) -> float:
    row = corpus._row(doc_id)
    col = corpus.term_index.get(term)
    if col is None:
        return 0.0
    return float(corpus.weights[row, col])


def term_correlation(t_a: str, t_b: str, corpus: Corpus) -> float:
    return float(np.dot(corpus.vector(t_a), corpus.vector(t_b)))


def cosine_sim(t_a: str, t_b: str, corpus: Corpus) -> float:
    norm = math.sqrt(term_correlation(t_a, t_a, corpus) * term_correlation(t_b, t_b, corpus))
    if norm == 0:
        raise ZeroVectorError(f"zero weight vector for {t_a!r} or {t_b!r}")
    return min(1.0, max(0.0, term_correlation(t_a, t_b, corpus) / norm))


def _cosine_to(anchor: str, candidates: Sequence[str], corpus: Corpus) -> Dict[str, float]:
    """Cosine of every candidate to `anchor`; zero vectors score 0."""
    if not candidates:
        return {}
    w = corpus.weights
    cols = [corpus.term_index[t] for t in candidates]
    a = w[:, corpus.term_index[anchor]]
    m = w[:, cols]
    dots = a @ m
    norms = np.linalg.norm(a) * np.linalg.norm(m, axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        sims = np.where(norms > 0, dots / norms, 0.0)
    return dict(zip(candidates, np.clip(sims, 0.0, 1.0).tolist()))


# =========================
# 5) ITERATIVE kNN SELECTION
# =========================
def knn_select(c_exp: Sequence[ScoredTerm], corpus: Corpus, params: KnnParams) -> List[str]:
    """
    r0 rounds of: move the current best term t into NN, re-score the rest by
    cosine to t, drop the l lowest, pick the new best. Then the k - r0 best
    survivors are appended, so |NN| = k.
    """
    k, l, r0 = params.k, params.l, params.r0
    if len(c_exp) < k + l * r0:
        raise InsufficientTermsError(
            f"{len(c_exp)} candidates cannot yield k={k} with l={l}, r0={r0} (need {k + l * r0})",
            available=len(c_exp), needed=k + l * r0,
        )

    scores = {st.term: st.score for st in c_exp}
    t = _ranked(scores)[0][0]
    nn: List[str] = []
    for _ in range(r0):
        nn.append(t)
        del scores[t]
        scores = _cosine_to(t, list(scores), corpus)
        ranked = _ranked(scores)
        if l:
            ranked = ranked[:-l]
        scores = dict(ranked)
        t = ranked[0][0] if ranked else None

    tail = [term for term, _ in _ranked(scores)[: k - r0]]
    return nn + tail


# =========================
# 6) QUERY CORRELATION
# =========================
def correlation_score(term: str, query: Query, corpus: Corpus) -> float:
    vec = corpus.vector(term)
    total = 0.0
    for q in query.terms:
        if q in corpus.term_index:
            total += float(np.dot(vec, corpus.vector(q)))
    return total / len(query.terms)


# =========================
# 7) END-TO-END
# =========================
def expand_corpus(query: Query, corpus: Corpus, config: ExpansionConfig) -> ExpandedQuery:
    c_exp = rank_by_tf_itf(corpus, config.m_intermediate)
    logger.debug("%s: %d tf-itf candidates, top %s", query.id, len(c_exp), [s.term for s in c_exp[:5]])
    nn = knn_select(c_exp, corpus, config.knn)

    reweighted = {t: correlation_score(t, query, corpus) for t in nn}
    original = set(query.terms)
    final = [(t, s) for t, s in _ranked(reweighted) if t not in original][: config.n_final]
    if len(final) < config.n_final:
        logger.warning("%s: only %d expansion terms available (n=%d)", query.id, len(final), config.n_final)
    return ExpandedQuery(original=query, expansion=final, provenance=config)


def expand_query(query: Query, snapshot: Snapshot, config: ExpansionConfig,
                 analyzer: Optional[Analyzer] = None) -> ExpandedQuery:
    analyzer = analyzer or Analyzer()
    docs = build_corpus(snapshot, query.id, config.engines, config.n_docs, dedup=config.dedup)
    corpus = build_stats(docs, analyzer)
    logger.debug("%s: corpus of %d docs, %d terms, T=%d", query.id, len(corpus.doc_ids),
                 len(corpus.terms), corpus.total_tokens)
    return expand_corpus(query, corpus, config)


def expand_topics(topics: Mapping[str, str], snapshot: Snapshot, config: ExpansionConfig,
                  analyzer: Optional[Analyzer] = None):
    """Expands every topic; returns (expanded queries, {query_id: error})."""
    analyzer = analyzer or Analyzer()
    results, failures = [], {}
    for qid in sorted(topics):
        try:
            query = Query.from_text(qid, topics[qid], analyzer)
            results.append(expand_query(query, snapshot, config, analyzer))
        except (WKQEError, ValueError) as e:
            logger.warning("query %s not expanded: %s", qid, e)
            failures[qid] = e
    return results, failures


# =========================
# 8) RETRIEVAL WEIGHTS
# =========================
def retrieval_weights(expanded: ExpandedQuery, beta: float = None, floor: float = None) -> List[Tuple[str, float]]:
    """
    Original terms weigh 1.0. Expansion scores are min-max scaled into
    [floor, 1] and multiplied by beta.
    """
    beta = expanded.provenance.beta if beta is None else beta
    floor = expanded.provenance.weight_floor if floor is None else floor
    weighted = [(t, 1.0) for t in expanded.original.terms]
    if not expanded.expansion:
        return weighted

    scores = [s for _, s in expanded.expansion]
    lo, hi = min(scores), max(scores)
    for term, score in expanded.expansion:
        scaled = 1.0 if hi == lo else (score - lo) / (hi - lo)
        weighted.append((term, beta * (floor + (1.0 - floor) * scaled)))
    return weighted


# =========================
# 9) FILES + REPORTS
# =========================
def write_expanded_queries(expanded: Sequence[ExpandedQuery], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for eq in sorted(expanded, key=lambda e: e.original.id):
            f.write(json.dumps(eq.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
    return path


def read_expanded_queries(path) -> List[ExpandedQuery]:
    with open(path, "r", encoding="utf-8") as f:
        return [ExpandedQuery.from_record(json.loads(line)) for line in f if line.strip()]


def expansion_table(by_variant: Mapping[str, Sequence[ExpandedQuery]], topics: Mapping[str, str],
                    top: int = 10) -> pd.DataFrame:
    """One row per query, one column of comma-joined expansion terms per engine combination."""
    rows = {qid: {"Query ID": qid, "Original query": topics.get(qid, "")} for qid in sorted(topics)}
    for variant, expanded in by_variant.items():
        for eq in expanded:
            row = rows.setdefault(eq.original.id, {"Query ID": eq.original.id, "Original query": ""})
            row[f"Expansion terms ({variant})"] = ", ".join(eq.terms()[:top])
    return pd.DataFrame(list(rows.values())).fillna("")


def format_expansion_table(frame: pd.DataFrame) -> str:
    lines = ["=" * 70, "  EXPANSION TERMS PER ENGINE COMBINATION", "=" * 70]
    lines.append(frame.to_string(index=False, justify="left"))
    return "\n".join(lines)
