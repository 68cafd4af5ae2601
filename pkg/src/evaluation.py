"""
evaluation.py
-------------
Metric suite over run files and qrels. AP/MAP, P@k, bpref, recall and the
11-point interpolated curve come from trec_eval (pytrec_eval); set-based F1,
GM_MAP and relative improvement are computed here.

Relevant means grade >= 1. Unjudged retrieved documents count as non-relevant
for the precision-style metrics and are ignored by bpref.
"""

import json
import logging
import re
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
import pytrec_eval
from pydantic import BaseModel, Field

from src.errors import NoRelevantDocsError, ParseError, ZeroBaselineError
from src.retrieval import RankedList, read_run

logger = logging.getLogger(__name__)

Qrels = Dict[str, Dict[str, int]]
PR_LEVELS = [i / 10 for i in range(11)]


# -----------------------------
# 1) Readers
# -----------------------------
def read_qrels(path) -> Qrels:
    """4-column `query_id 0 doc_id grade`."""
    qrels: Qrels = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"expected 4 columns, got {len(parts)}", path=path, line_no=line_no)
            qid, _, doc_id, grade = parts
            try:
                grade = int(grade)
            except ValueError:
                raise ParseError(f"bad grade {grade!r}", path=path, line_no=line_no)
            judged = qrels.setdefault(qid, {})
            if doc_id in judged:
                raise ParseError(f"duplicate judgment for ({qid}, {doc_id})", path=path, line_no=line_no)
            judged[doc_id] = grade
    return qrels


TOP_RE = re.compile(r"<top>(.*?)</top>", re.S | re.I)
NUM_RE = re.compile(r"<num>\s*(?:Number:)?\s*([^<\n]+)", re.I)
TITLE_RE = re.compile(r"<title>\s*(?:Topic:)?\s*([^<]+)", re.I)


def read_topics(path) -> Dict[str, str]:
    """`query_id <TAB> title` lines, or TREC topic SGML (title field only)."""
    text = Path(path).read_text(encoding="utf-8")
    topics: Dict[str, str] = {}
    if TOP_RE.search(text):
        for block in TOP_RE.findall(text):
            num, title = NUM_RE.search(block), TITLE_RE.search(block)
            if num and title:
                topics[num.group(1).strip()] = " ".join(title.group(1).split())
        return topics

    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ParseError("expected query_id<TAB>title", path=path, line_no=line_no)
        qid, title = line.split("\t", 1)
        if qid.strip() in topics:
            raise ParseError(f"duplicate topic id {qid.strip()}", path=path, line_no=line_no)
        topics[qid.strip()] = title.strip()
    return topics


# -----------------------------
# 2) Per-query metrics
# -----------------------------
# trec_eval measures; P and iprec_at_recall expand to P_5.. and iprec_at_recall_0.00..1.00
TREC_MEASURES = {"map", "P", "bpref", "set_recall", "num_rel_ret", "iprec_at_recall"}


def _relevant(qrels: Qrels, query_id: str) -> set:
    return {d for d, g in qrels.get(query_id, {}).items() if g >= 1}


def _require_relevant(qrels: Qrels, query_id: str) -> set:
    rel = _relevant(qrels, query_id)
    if not rel:
        raise NoRelevantDocsError(f"query {query_id} has no relevant documents", query_id=query_id)
    return rel


def trec_measures(run: Mapping[str, RankedList], qrels: Qrels,
                  measures=TREC_MEASURES) -> Dict[str, Dict[str, float]]:
    """
    trec_eval over ranked lists: {query_id: {measure: value}}. Documents are
    ordered by score descending, then doc id descending; the rank column is not
    used. Queries with no relevant document or an empty list are left out.
    """
    judged = {q: {d: int(g) for d, g in qrels[q].items()} for q in run if _relevant(qrels, q)}
    scored = {q: {doc_id: float(score) for doc_id, score, _ in run[q].entries} for q in judged if len(run[q])}
    if not scored:
        return {}
    judged = {q: judged[q] for q in scored}
    return pytrec_eval.RelevanceEvaluator(judged, set(measures)).evaluate(scored)


def _measure(ranked: RankedList, qrels: Qrels, query_id: str, key: str, measure: str = None) -> float:
    _require_relevant(qrels, query_id)
    result = trec_measures({query_id: ranked}, qrels, {measure or key})
    return float(result.get(query_id, {}).get(key, 0.0))


def average_precision(ranked: RankedList, qrels: Qrels, query_id: str) -> float:
    return _measure(ranked, qrels, query_id, "map")


def precision_at_k(ranked: RankedList, qrels: Qrels, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if not _relevant(qrels, ranked.query_id):
        return 0.0
    return _measure(ranked, qrels, ranked.query_id, f"P_{k}", f"P.{k}")


def bpref(ranked: RankedList, qrels: Qrels, query_id: str) -> float:
    """Denominator min(R, N) with N the judged non-relevant count; unjudged documents are skipped."""
    return _measure(ranked, qrels, query_id, "bpref")


def relevant_retrieved(ranked: RankedList, qrels: Qrels, query_id: str) -> int:
    rel = _relevant(qrels, query_id)
    return sum(1 for d in ranked.doc_ids if d in rel)


def recall(ranked: RankedList, qrels: Qrels, query_id: str) -> float:
    return _measure(ranked, qrels, query_id, "set_recall")


def f_measure(ranked: RankedList, qrels: Qrels, query_id: str) -> float:
    """Set-based F1 over the whole retrieved list."""
    rel = _require_relevant(qrels, query_id)
    rel_ret = relevant_retrieved(ranked, qrels, query_id)
    if rel_ret == 0:
        return 0.0
    p, r = rel_ret / len(ranked), rel_ret / len(rel)
    return 2 * p * r / (p + r)


def _curve(values: Mapping[str, float]) -> List[float]:
    return [float(values.get(f"iprec_at_recall_{level:.2f}", 0.0)) for level in PR_LEVELS]


def interpolated_pr(ranked: RankedList, qrels: Qrels, query_id: str) -> List[float]:
    """Max precision at any rank whose recall >= level, for levels 0.0..1.0."""
    _require_relevant(qrels, query_id)
    result = trec_measures({query_id: ranked}, qrels, {"iprec_at_recall"})
    return _curve(result.get(query_id, {}))


# -----------------------------
# 3) Aggregates
# -----------------------------
def mean_ap(aps: Sequence[float]) -> float:
    return float(np.mean(aps)) if len(aps) else 0.0


def gmap(aps: Sequence[float], epsilon: float = 1e-5) -> float:
    if not len(aps):
        return 0.0
    return float(np.exp(np.mean(np.log(np.maximum(np.asarray(aps, dtype=float), epsilon)))))


def relative_improvement(new: float, baseline: float) -> float:
    if baseline <= 0:
        raise ZeroBaselineError("relative improvement needs a positive baseline")
    return 100.0 * (new - baseline) / baseline


# =========================
# 4) REPORT
# =========================
class QueryMetrics(BaseModel):
    ap: float
    p5: float
    p10: float
    p20: float
    p30: float
    bpref: float
    f_measure: float
    recall: float
    rel_ret: int
    relevant: int
    retrieved: int
    pr_curve: List[float]


class AggregateMetrics(BaseModel):
    queries: int
    map: float
    gm_map: float
    p5: float
    p10: float
    p20: float
    p30: float
    bpref: float
    f_measure: float
    recall: float
    rel_ret: int
    relevant: int
    retrieved: int


class MetricsReport(BaseModel):
    run: str = ""
    per_query: Dict[str, QueryMetrics] = Field(default_factory=dict)
    aggregate: AggregateMetrics
    pr_curve: List[float]


def query_metrics(ranked: RankedList, qrels: Qrels, query_id: str,
                  values: Optional[Mapping[str, float]] = None) -> QueryMetrics:
    """`values` are this query's trec_measures output; computed here when not given."""
    _require_relevant(qrels, query_id)
    if values is None:
        values = trec_measures({query_id: ranked}, qrels).get(query_id, {})
    return QueryMetrics(
        ap=float(values.get("map", 0.0)),
        p5=float(values.get("P_5", 0.0)), p10=float(values.get("P_10", 0.0)),
        p20=float(values.get("P_20", 0.0)), p30=float(values.get("P_30", 0.0)),
        bpref=float(values.get("bpref", 0.0)),
        f_measure=f_measure(ranked, qrels, query_id),
        recall=float(values.get("set_recall", 0.0)),
        rel_ret=int(values.get("num_rel_ret", 0)),
        relevant=len(_relevant(qrels, query_id)),
        retrieved=len(ranked),
        pr_curve=_curve(values),
    )


def evaluate(run, qrels, topics: Optional[Mapping[str, str]] = None, epsilon: float = 1e-5,
             name: str = "") -> MetricsReport:
    """
    `run` is a run-file path or {query_id: RankedList}; `qrels` a path or parsed
    qrels. Queries judged but absent from the run score 0; queries without any
    relevant document are left out of the aggregates.
    """
    if not isinstance(run, Mapping):
        name = name or Path(run).stem
        run = read_run(run)
    if not isinstance(qrels, Mapping):
        qrels = read_qrels(qrels)

    query_ids = sorted(qrels)
    if topics is not None:
        query_ids = [q for q in query_ids if q in topics]

    judged = []
    for qid in query_ids:
        if _relevant(qrels, qid):
            judged.append(qid)
        else:
            logger.warning("query %s has no relevant documents; excluded from aggregates", qid)

    lists = {qid: run.get(qid, RankedList(qid)) for qid in judged}
    scores = trec_measures(lists, qrels)
    per_query: Dict[str, QueryMetrics] = {
        qid: query_metrics(lists[qid], qrels, qid, scores.get(qid, {})) for qid in judged
    }

    frame = pd.DataFrame({q: m.model_dump(exclude={"pr_curve"}) for q, m in per_query.items()}).T
    if frame.empty:
        agg = AggregateMetrics(queries=0, map=0.0, gm_map=0.0, p5=0.0, p10=0.0, p20=0.0, p30=0.0,
                               bpref=0.0, f_measure=0.0, recall=0.0, rel_ret=0, relevant=0, retrieved=0)
        return MetricsReport(run=name, per_query={}, aggregate=agg, pr_curve=[0.0] * len(PR_LEVELS))

    aps = frame["ap"].astype(float).tolist()
    means = frame.astype(float).mean()
    agg = AggregateMetrics(
        queries=len(frame),
        map=mean_ap(aps),
        gm_map=gmap(aps, epsilon),
        p5=means["p5"], p10=means["p10"], p20=means["p20"], p30=means["p30"],
        bpref=means["bpref"], f_measure=means["f_measure"], recall=means["recall"],
        rel_ret=int(frame["rel_ret"].sum()),
        relevant=int(frame["relevant"].sum()),
        retrieved=int(frame["retrieved"].sum()),
    )
    curve = np.mean([m.pr_curve for m in per_query.values()], axis=0).tolist()
    return MetricsReport(run=name, per_query=per_query, aggregate=agg, pr_curve=curve)


# -----------------------------
# 5) Output formats
# -----------------------------
REPORT_COLUMNS = ["ap", "p5", "p10", "p20", "p30", "bpref", "f_measure", "recall", "rel_ret"]


def per_query_frame(report: MetricsReport) -> pd.DataFrame:
    rows = {q: m.model_dump(exclude={"pr_curve"}) for q, m in report.per_query.items()}
    return pd.DataFrame.from_dict(rows, orient="index", columns=REPORT_COLUMNS + ["relevant", "retrieved"])


def format_report(report: MetricsReport) -> str:
    a = report.aggregate
    lines = ["=" * 70, f"  EVALUATION REPORT: {report.run or 'run'}", "=" * 70]
    lines.append(f"  - Queries evaluated : {a.queries}")
    lines.append(f"  - MAP               : {a.map:.4f}")
    lines.append(f"  - GM_MAP            : {a.gm_map:.4f}")
    lines.append(f"  - P@5 / P@10        : {a.p5:.4f} / {a.p10:.4f}")
    lines.append(f"  - P@20 / P@30       : {a.p20:.4f} / {a.p30:.4f}")
    lines.append(f"  - bpref             : {a.bpref:.4f}")
    lines.append(f"  - F-measure         : {a.f_measure:.4f}")
    lines.append(f"  - Recall            : {a.recall:.4f} ({a.rel_ret}/{a.relevant} relevant retrieved)")

    lines.append("\nPER-QUERY")
    lines.append("-" * 70)
    frame = per_query_frame(report)
    if not frame.empty:
        lines.append(frame[REPORT_COLUMNS].to_string(float_format=lambda v: f"{v:.4f}"))

    lines.append("\nINTERPOLATED PRECISION (11-point)")
    lines.append("-" * 70)
    for level, p in zip(PR_LEVELS, report.pr_curve):
        lines.append(f"  recall {level:.1f} : {p:.4f}")
    return "\n".join(lines)


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report.model_dump(mode="json"), indent=2, sort_keys=True)


def pr_curve_frame(report: MetricsReport) -> pd.DataFrame:
    return pd.DataFrame({"recall": PR_LEVELS, "precision": report.pr_curve})


def _arrow(pct: float) -> str:
    return "↑" if pct > 0 else ("↓" if pct < 0 else "=")


def comparison_frame(reports: Mapping[str, MetricsReport], baseline: str,
                     metrics: Sequence[str] = ("map", "gm_map", "p5", "p10", "bpref", "f_measure")) -> pd.DataFrame:
    """Aggregate metrics per run with signed improvement over `baseline`, e.g. `0.3481 (↑25.89%)`."""
    base = reports[baseline].aggregate
    rows = []
    for name, report in reports.items():
        row = {"run": name}
        for metric in metrics:
            value = getattr(report.aggregate, metric)
            ref = getattr(base, metric)
            if name == baseline or ref <= 0:
                row[metric] = f"{value:.4f}"
            else:
                pct = relative_improvement(value, ref)
                row[metric] = f"{value:.4f} ({_arrow(pct)}{abs(pct):.2f}%)"
        rows.append(row)
    return pd.DataFrame(rows)
