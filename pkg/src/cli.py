import argparse
import json
import logging
import sys
import typing
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from src.config import ExpansionConfig, ExperimentConfig, iter_config_keys, load_config, require_paths
from src.errors import ConfigError, EmptyResultError, MissingArtifactError, WKQEError
from src.evaluation import (
    MetricsReport,
    comparison_frame,
    evaluate,
    format_report,
    pr_curve_frame,
    read_qrels,
    read_topics,
    report_to_json,
)
from src.expansion import (
    ExpandedQuery,
    Query,
    expand_topics,
    expansion_table,
    format_expansion_table,
    read_expanded_queries,
    retrieval_weights,
    write_expanded_queries,
)
from src.retrieval import (
    IndexedCollection,
    analyze_query,
    build_index,
    get_model,
    load_index,
    read_collection,
    save_index,
    search,
    write_run,
)
from src.textproc import Analyzer
from src.websource import (
    SearchApiProvider,
    Snapshot,
    SnapshotMeta,
    SnapshotProvider,
    UrlListProvider,
    acquire_serp,
    engine_combinations,
    fetch_documents,
    filter_urls,
    load_blocklist,
    read_snapshot,
    utc_now,
    variant_name,
    write_snapshot,
)

logger = logging.getLogger(__name__)

SERP_DEPTH = 100
GLOBAL_KEYS = {"seed", "paths.out_dir"}


# =========================
# 1) SHARED HELPERS
# =========================
def out_path(config: ExperimentConfig, name: str) -> Path:
    out = Path(config.paths.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out / name


def snapshot_path(config: ExperimentConfig) -> Path:
    return Path(config.paths.snapshot) if config.paths.snapshot else out_path(config, "snapshot.jsonl")


def index_path(config: ExperimentConfig) -> Path:
    return Path(config.paths.index) if config.paths.index else out_path(config, "index.json")


def load_snapshot(config: ExperimentConfig) -> Snapshot:
    path = snapshot_path(config)
    if not path.exists():
        raise MissingArtifactError(f"snapshot {path} not found; run `fetch` first", path=str(path))
    return read_snapshot(path)


def make_model(config: ExperimentConfig, name: Optional[str] = None):
    name = name or config.model
    params = config.model_params if name == config.model else {}
    try:
        return get_model(name, **params)
    except ValueError as e:
        raise ConfigError(str(e))


def baseline_queries(topics: Mapping[str, str], analyzer: Analyzer) -> Dict[str, List[Tuple[str, float]]]:
    queries = {}
    for qid in sorted(topics):
        terms = analyzer.analyze(topics[qid])
        if terms:
            queries[qid] = [(t, 1.0) for t in dict.fromkeys(terms)]
        else:
            logger.warning("topic %s has no terms after analysis", qid)
    return queries


def expanded_queries(expanded: List[ExpandedQuery]) -> Dict[str, List[Tuple[str, float]]]:
    return {eq.original.id: retrieval_weights(eq) for eq in expanded}


def run_queries(queries: Mapping[str, List[Tuple[str, float]]], index: IndexedCollection, model, r_max: int):
    return {qid: search(qid, analyze_query(terms), index, model, r_max) for qid, terms in sorted(queries.items())}


def pipeline_report(config: ExperimentConfig, snapshot: Snapshot, index: IndexedCollection,
                    topics: Mapping[str, str], qrels, model_name: str) -> Tuple[MetricsReport, Dict[str, Exception]]:
    """
    expand -> search -> evaluate for one configuration, all in memory.
    Topics that failed to expand are searched with their unexpanded titles and
    returned as {query_id: error} next to the report.
    """
    analyzer = Analyzer(config.analyzer)
    expanded, failures = expand_topics(topics, snapshot, config.expansion, analyzer)
    queries = baseline_queries(topics, analyzer)
    queries.update(expanded_queries(expanded))
    run = run_queries(queries, index, make_model(config, model_name), config.r_max)
    return evaluate(run, qrels, topics, epsilon=config.gm_epsilon, name=model_name), failures


def failure_codes(failures: Mapping[str, Exception]) -> Dict[str, str]:
    return {q: e.code if isinstance(e, WKQEError) else type(e).__name__ for q, e in sorted(failures.items())}


# =========================
# 2) COMMANDS
# =========================
def make_provider(config: ExperimentConfig, topics: Mapping[str, str]):
    kind = config.fetch.provider
    if kind == "urllist":
        if not config.fetch.urllist_path:
            raise ConfigError("fetch.urllist_path is required for the urllist provider")
        return UrlListProvider(config.fetch.urllist_path, topics)
    if kind == "api":
        return SearchApiProvider(config.fetch)
    if kind == "snapshot":
        return SnapshotProvider(read_snapshot(snapshot_path(config)))
    raise ConfigError(f"unknown provider {kind!r}")


def cmd_fetch(config: ExperimentConfig, fetcher: Callable = None) -> Path:
    """Acquires, filters and fetches the top-N pages; pages already in the snapshot are not refetched."""
    require_paths(config, "topics")
    topics = read_topics(config.paths.topics)
    path = snapshot_path(config)
    existing = read_snapshot(path) if path.exists() else None
    have = existing.keys() if existing else set()

    provider = make_provider(config, topics)
    blocklist = load_blocklist(config.fetch.blocklist_path)
    n = config.expansion.n_docs

    todo = []
    for qid in sorted(topics):
        for engine in config.expansion.engines:
            try:
                entries = acquire_serp(topics[qid], engine, SERP_DEPTH, provider, query_id=qid)
            except EmptyResultError as e:
                logger.warning("%s", e.message)
                continue
            kept = filter_urls(entries, blocklist)[:n]
            todo.extend(e for e in kept if (e.query_id, e.engine, e.url) not in have)

    print(f"▸ Fetching {len(todo)} new pages ({len(have)} already in snapshot)...")
    docs = fetch_documents(todo, config.fetch, fetcher) if todo else []

    entries = (existing.entries if existing else []) + docs
    queries = dict(existing.metadata.queries) if existing else {}
    queries.update(topics)
    meta = SnapshotMeta(
        created_at=existing.metadata.created_at if existing else utc_now(),
        provider=provider.name,
        n_requested=n,
        queries=queries,
    )
    write_snapshot(Snapshot(entries=entries, metadata=meta), path)
    return path


def cmd_expand(config: ExperimentConfig, variants: bool = False):
    """Expands every topic; writes expanded_queries.jsonl and the expansion-term table."""
    require_paths(config, "topics")
    topics = read_topics(config.paths.topics)
    snapshot = load_snapshot(config)
    analyzer = Analyzer(config.analyzer)

    print(f"▸ Expanding {len(topics)} topics with {variant_name(config.expansion.engines)}...")
    expanded, failures = expand_topics(topics, snapshot, config.expansion, analyzer)
    expanded_file = write_expanded_queries(expanded, out_path(config, "expanded_queries.jsonl"))

    by_variant = {variant_name(config.expansion.engines): expanded}
    if variants:
        for combo in engine_combinations(config.expansion.engines):
            name = variant_name(combo, config.expansion.engines)
            if name in by_variant:
                continue
            cfg = config.expansion.model_copy(update={"engines": combo})
            by_variant[name], _ = expand_topics(topics, snapshot, cfg, analyzer)

    table = format_expansion_table(expansion_table(by_variant, topics))
    out_path(config, "expansion_terms.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return expanded_file, expanded, failures


def cmd_index(config: ExperimentConfig) -> Path:
    require_paths(config, "collection")
    print(f"▸ Indexing {config.paths.collection}...")
    index = build_index(read_collection(config.paths.collection), Analyzer(config.analyzer))
    return save_index(index, index_path(config))


def cmd_search(config: ExperimentConfig, expanded_file: Optional[str] = None, run_name: Optional[str] = None) -> Path:
    """Baseline run from raw topic titles, or expanded run from an expanded-queries file."""
    require_paths(config, "topics")
    topics = read_topics(config.paths.topics)
    index = load_index(index_path(config))
    analyzer = Analyzer(config.analyzer)

    queries = baseline_queries(topics, analyzer)
    if expanded_file:
        if not Path(expanded_file).exists():
            raise MissingArtifactError(f"expanded queries {expanded_file} not found", path=str(expanded_file))
        queries.update(expanded_queries(read_expanded_queries(expanded_file)))

    model = make_model(config)
    kind = "expanded" if expanded_file else "baseline"
    print(f"▸ Searching {len(queries)} queries ({kind}, {model.name})...")
    run = run_queries(queries, index, model, config.r_max)
    name = run_name or f"run.{kind}.{model.name}.txt"
    return write_run(run.values(), config.run_tag, out_path(config, name))


def cmd_eval(config: ExperimentConfig, run_file: str, baseline_file: Optional[str] = None) -> MetricsReport:
    require_paths(config, "qrels")
    for f in filter(None, [run_file, baseline_file]):
        if not Path(f).exists():
            raise MissingArtifactError(f"run file {f} not found", path=str(f))
    topics = read_topics(config.paths.topics) if config.paths.topics else None
    qrels = read_qrels(config.paths.qrels)

    report = evaluate(run_file, qrels, topics, epsilon=config.gm_epsilon)
    stem = Path(run_file).stem
    text = format_report(report)
    out_path(config, f"{stem}.report.txt").write_text(text + "\n", encoding="utf-8")
    out_path(config, f"{stem}.report.json").write_text(report_to_json(report) + "\n", encoding="utf-8")
    pr_curve_frame(report).to_csv(out_path(config, f"{stem}.pr.csv"), index=False, float_format="%.4f")
    print(text)

    if baseline_file:
        name = Path(baseline_file).stem
        if name == report.run:
            name = f"{name} (baseline)"
        base = evaluate(baseline_file, qrels, topics, epsilon=config.gm_epsilon, name=name)
        table = comparison_frame({base.run: base, report.run: report}, baseline=base.run)
        print("\nCOMPARISON WITH BASELINE")
        print("-" * 70)
        print(table.to_string(index=False))
        table.to_csv(out_path(config, f"{stem}.comparison.csv"), index=False)
    return report


def sweep_config(config: ExperimentConfig, axis: str, value: int) -> ExperimentConfig:
    """Config for one grid point. The terms axis raises k and M when n would exceed them."""
    data = config.expansion.model_dump()
    if axis == "docs":
        data["n_docs"] = value
    elif axis == "terms":
        knn = data["knn"]
        knn["k"] = max(knn["k"], value)
        data["n_final"] = value
        data["m_intermediate"] = max(data["m_intermediate"], knn["k"] + knn["l"] * knn["r0"])
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}; use docs or terms")
    try:
        expansion = ExpansionConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid sweep point {axis}={value}: {e}")
    return config.model_copy(update={"expansion": expansion})


def cmd_sweep(config: ExperimentConfig, axis: str, workers: Optional[int] = None) -> Tuple[Path, pd.DataFrame]:
    """One row per (grid value, model); rows ordered by grid value then model."""
    require_paths(config, "topics", "qrels")
    topics = read_topics(config.paths.topics)
    qrels = read_qrels(config.paths.qrels)
    snapshot = load_snapshot(config)
    index = load_index(index_path(config))
    grid = config.sweep.docs_grid if axis == "docs" else config.sweep.terms_grid
    column = "n_docs" if axis == "docs" else "n_terms"

    if axis == "docs":
        depth = snapshot.metadata.n_requested
        for value in grid:
            if value > depth:
                logger.warning("n_docs=%d exceeds the snapshot depth of %d pages per engine; re-run fetch with "
                               "--expansion.n-docs %d to cover it", value, depth, max(grid))

    def row(value, model, score, status, failed=None) -> dict:
        codes = " ".join(f"{q}:{c}" for q, c in failure_codes(failed or {}).items())
        return {column: value, "model": model, "map": score, "status": status, "failed_topics": codes}

    def point(value: int) -> List[dict]:
        rows = []
        try:
            cfg = sweep_config(config, axis, value)
        except WKQEError as e:
            return [row(value, m, None, e.code) for m in config.sweep.models]
        for model in config.sweep.models:
            try:
                report, failures = pipeline_report(cfg, snapshot, index, topics, qrels, model)
            except (WKQEError, ValueError) as e:
                logger.warning("sweep %s=%s model=%s failed: %s", column, value, model, e)
                rows.append(row(value, model, None, "failed"))
                continue
            if not failures:
                rows.append(row(value, model, report.aggregate.map, "ok"))
            elif len(failures) < len(topics):
                logger.warning("sweep %s=%s model=%s: %d of %d topics not expanded",
                               column, value, model, len(failures), len(topics))
                rows.append(row(value, model, report.aggregate.map, "partial", failures))
            else:
                logger.warning("sweep %s=%s model=%s: no topic expanded", column, value, model)
                rows.append(row(value, model, None, "failed", failures))
        return rows

    print(f"▸ Sweeping {column} over {grid} for {config.sweep.models}...")
    with ThreadPoolExecutor(max_workers=workers or config.sweep.workers) as pool:
        results = list(pool.map(point, grid))

    frame = pd.DataFrame([row for rows in results for row in rows])
    frame = frame.sort_values([column, "model"], kind="stable").reset_index(drop=True)
    path = out_path(config, f"sweep_{axis}.csv")
    frame.to_csv(path, index=False, float_format="%.4f")
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return path, frame


# =========================
# 3) ARGUMENT PARSING
# =========================
def _bool(value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {value!r}")


def _pair(value: str):
    if "=" not in value:
        raise argparse.ArgumentTypeError(f"expected key=value, got {value!r}")
    key, raw = value.split("=", 1)
    return key, float(raw)


def _argument_spec(annotation):
    origin = typing.get_origin(annotation)
    args = [a for a in typing.get_args(annotation) if a is not type(None)]
    if origin is typing.Union and args:
        return _argument_spec(args[0])
    if origin in (list, List):
        return {"nargs": "+", "type": args[0] if args else str}
    if origin in (dict, Dict):
        return {"nargs": "+", "type": _pair}
    if annotation is bool:
        return {"type": _bool}
    if annotation in (int, float):
        return {"type": annotation}
    return {"type": str}


def config_parent() -> argparse.ArgumentParser:
    """Global flags plus one flag per config key (dotted key, underscores as dashes)."""
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="JSON config file; flags override its values")
    parent.add_argument("--out-dir", dest="cfg:paths.out_dir", help="Output directory")
    parent.add_argument("--seed", dest="cfg:seed", type=int, help="Reserved")
    parent.add_argument("--verbose", action="store_true", help="Debug logging")

    group = parent.add_argument_group("config keys")
    for dotted, field in iter_config_keys():
        if dotted in GLOBAL_KEYS:
            continue
        flag = "--" + dotted.replace("_", "-")
        default = field.get_default(call_default_factory=True)
        help_text = f"{field.description or dotted} (default: {default})"
        group.add_argument(flag, dest=f"cfg:{dotted}", metavar=dotted.rsplit(".", 1)[-1].upper(), help=help_text,
                           **_argument_spec(field.annotation))
    return parent


def build_parser() -> argparse.ArgumentParser:
    parent = config_parent()
    parser = argparse.ArgumentParser(description="Web-knowledge query expansion experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fetch", parents=[parent], help="Acquire result lists and fetch pages into a snapshot")

    p = sub.add_parser("expand", parents=[parent], help="Expand topics from the snapshot")
    p.add_argument("--variants", action="store_true", help="Also expand every engine combination for the term table")

    sub.add_parser("index", parents=[parent], help="Index the target collection")

    p = sub.add_parser("search", parents=[parent], help="Search topics (baseline or expanded) and write a run file")
    p.add_argument("--expanded", help="Expanded-queries file; omit for the baseline run")
    p.add_argument("--run-name", help="Run file name inside the output directory")

    p = sub.add_parser("eval", parents=[parent], help="Evaluate a run file against qrels")
    p.add_argument("run", help="Run file")
    p.add_argument("--baseline", help="Baseline run file for relative improvements")

    p = sub.add_parser("sweep", parents=[parent], help="Parameter sweep over documents or expansion terms")
    p.add_argument("axis", choices=["docs", "terms"])
    p.add_argument("--workers", type=int, help="Grid points run in parallel")
    return parser


def overrides_from_args(args: argparse.Namespace) -> dict:
    overrides = {}
    for dest, value in vars(args).items():
        if dest.startswith("cfg:") and value is not None:
            key = dest[4:]
            overrides[key] = dict(value) if isinstance(value, list) and value and isinstance(value[0], tuple) else value
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="[%(levelname)s] %(message)s")

    try:
        config = load_config(args.config, overrides_from_args(args))
        if args.command == "fetch":
            path = cmd_fetch(config)
            print(f"\n✨ Snapshot saved to: {path}")
        elif args.command == "expand":
            path, expanded, failures = cmd_expand(config, variants=args.variants)
            print(f"\n✨ Expanded queries saved to: {path}")
            if failures:
                summary = {"error": "partial-failure", "failed": failure_codes(failures)}
                print(json.dumps(summary, sort_keys=True), file=sys.stderr)
                return 2 if expanded else 1
        elif args.command == "index":
            path = cmd_index(config)
            print(f"\n✨ Index saved to: {path}")
        elif args.command == "search":
            path = cmd_search(config, args.expanded, args.run_name)
            print(f"\n✨ Run saved to: {path}")
        elif args.command == "eval":
            cmd_eval(config, args.run, args.baseline)
        elif args.command == "sweep":
            path, _ = cmd_sweep(config, args.axis, args.workers)
            print(f"\n✨ Sweep saved to: {path}")
    except WKQEError as e:
        print(json.dumps(e.summary(), sort_keys=True, default=str), file=sys.stderr)
        return 1
    return 0
