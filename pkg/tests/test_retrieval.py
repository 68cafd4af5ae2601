import math

import pytest

from src.errors import DuplicateDocIdError, MissingArtifactError, ParseError
from src.retrieval import (
    BM25,
    MODELS,
    RankedList,
    TfIdf,
    WeightedQueryTerm,
    WeightingModel,
    analyze_query,
    build_index,
    get_model,
    load_index,
    read_collection,
    read_run,
    register_model,
    save_index,
    score_bm25,
    score_tfidf,
    search,
    write_run,
)

DOCS = [
    ("d1", "Query expansion improves retrieval"),
    ("d2", "Retrieval models rank documents"),
    ("d3", "Web pages provide expansion terms for queries"),
    ("d4", "Cooking recipes and kitchens"),
]


@pytest.fixture
def index():
    return build_index(DOCS)


def test_build_index_stems_and_drops_stopwords(index):
    assert index.doc_count == 4
    assert index.doc_lengths == {"d1": 4, "d2": 4, "d3": 6, "d4": 3}
    assert index.doc_freq("expans") == 2
    assert index.doc_freq("queri") == 2
    assert index.tf("retriev", "d2") == 1
    assert index.doc_freq("and") == 0
    assert index.avg_doc_length == pytest.approx(17 / 4)


def test_build_index_rejects_duplicate_ids():
    with pytest.raises(DuplicateDocIdError):
        build_index([("d1", "one text"), ("d1", "another text")])


def test_index_save_load(tmp_path, index):
    path = save_index(index, tmp_path / "idx" / "index.json")
    loaded = load_index(path)
    assert loaded.postings == index.postings
    assert loaded.doc_lengths == index.doc_lengths
    with pytest.raises(MissingArtifactError):
        load_index(tmp_path / "missing.json")


def test_bm25_single_document_value():
    idx = build_index([("only", "retrieval")])
    # idf = ln((1 - 1 + 0.5) / (1 + 0.5) + 1) = ln(4/3); length normalisation is neutral
    expected = math.log(4 / 3) * 2.0
    assert score_bm25([WeightedQueryTerm("retriev", 2.0)], "only", idx) == pytest.approx(expected)
    assert math.log(4 / 3) == pytest.approx(0.28768, abs=1e-5)


def test_bm25_matches_formula(index):
    k1, b = 1.2, 0.75
    query = [WeightedQueryTerm("expans", 1.0), WeightedQueryTerm("retriev", 0.5)]
    expected = 0.0
    for term, weight in (("expans", 1.0), ("retriev", 0.5)):
        df, tf, dl = index.doc_freq(term), index.tf(term, "d1"), index.doc_lengths["d1"]
        idf = math.log((4 - df + 0.5) / (df + 0.5) + 1)
        expected += weight * idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / index.avg_doc_length))
    assert score_bm25(query, "d1", index) == pytest.approx(expected)
    assert BM25(k1=k1, b=b).score(query, "d1", index) == pytest.approx(expected)


def test_tfidf_matches_formula(index):
    query = [WeightedQueryTerm("web", 2.0), WeightedQueryTerm("expans", 1.0)]
    expected = 2.0 * 1 * math.log(4 / 1) + 1.0 * 1 * math.log(4 / 2)
    assert score_tfidf(query, "d3", index) == pytest.approx(expected)
    assert score_tfidf(query, "d4", index) == 0.0


def test_weight_scaling_is_linear(index):
    base = [WeightedQueryTerm("expans", 1.0)]
    doubled = [WeightedQueryTerm("expans", 2.0)]
    for model in (BM25(), TfIdf()):
        assert model.score(doubled, "d3", index) == pytest.approx(2 * model.score(base, "d3", index))


def test_weighted_term_needs_positive_weight():
    with pytest.raises(ValueError):
        WeightedQueryTerm("x", 0.0)


def test_model_registry():
    assert {"bm25", "tfidf"} <= set(MODELS)
    assert get_model("BM25", k1=0.9).params == {"k1": 0.9, "b": 0.75}
    with pytest.raises(ValueError):
        get_model("dph")
    with pytest.raises(ValueError):
        get_model("bm25", mu=2500)


def test_register_custom_model(index):
    @register_model("coord")
    class Coordination(WeightingModel):
        def term_score(self, tf, doc_len, term, index):
            return 1.0

    try:
        query = analyze_query([("expansion", 1.0), ("terms", 1.0)])
        ranked = search("q", query, index, get_model("coord"))
        assert ranked.entries[0][:2] == ("d3", 2.0)
    finally:
        MODELS.pop("coord")


def test_analyze_query_merges_stems():
    query = analyze_query([("expansion", 1.0), ("expansions", 0.25), ("web", 0.5)])
    assert query == [WeightedQueryTerm("expans", 1.25), WeightedQueryTerm("web", 0.5)]


def test_search_orders_and_truncates(index):
    query = analyze_query([("retrieval", 1.0), ("expansion", 1.0)])
    ranked = search("q1", query, index)
    assert ranked.query_id == "q1"
    assert ranked.doc_ids[0] == "d1"
    assert set(ranked.doc_ids) == {"d1", "d2", "d3"}
    assert [r for _, _, r in ranked.entries] == [1, 2, 3]
    scores = [s for _, s, _ in ranked.entries]
    assert scores == sorted(scores, reverse=True)

    assert search("q1", query, index, r_max=1).doc_ids == ["d1"]
    assert len(search("q1", analyze_query([("zebra", 1.0)]), index)) == 0


def test_search_breaks_ties_by_doc_id():
    idx = build_index([("b", "alpha"), ("a", "alpha"), ("c", "alpha")])
    assert search("q", analyze_query([("alpha", 1.0)]), idx).doc_ids == ["a", "b", "c"]


def test_run_file_format(tmp_path):
    runs = [RankedList("2", [("dX", 1.5, 1)]), RankedList("1", [("dA", 2.25, 1), ("dB", 0.125, 2)])]
    path = write_run(runs, "wkqe", tmp_path / "run.txt")
    assert path.read_text(encoding="utf-8").splitlines() == [
        "1 Q0 dA 1 2.250000 wkqe",
        "1 Q0 dB 2 0.125000 wkqe",
        "2 Q0 dX 1 1.500000 wkqe",
    ]
    parsed = read_run(path)
    assert parsed["1"].doc_ids == ["dA", "dB"]
    assert parsed["2"].entries == [("dX", 1.5, 1)]


def test_read_run_rejects_bad_lines(tmp_path):
    path = tmp_path / "run.txt"
    path.write_text("1 Q0 d1 1 0.5 tag\n1 Q0 d2 2 0.4\n", encoding="utf-8")
    with pytest.raises(ParseError) as info:
        read_run(path)
    assert info.value.line_no == 2


def test_read_collection_formats(tmp_path):
    sgml = tmp_path / "docs.sgml"
    sgml.write_text("<DOC>\n<DOCNO> FT-1 </DOCNO>\n<TEXT>first <B>body</B></TEXT>\n</DOC>\n"
                    "<DOC><DOCNO>FT-2</DOCNO><TEXT>second</TEXT></DOC>", encoding="utf-8")
    docs = list(read_collection(sgml))
    assert [d for d, _ in docs] == ["FT-1", "FT-2"]
    assert docs[0][1].split() == ["first", "body"]

    folder = tmp_path / "folder"
    folder.mkdir()
    (folder / "b.txt").write_text("bee", encoding="utf-8")
    (folder / "a.txt").write_text("ay", encoding="utf-8")
    assert list(read_collection(folder)) == [("a.txt", "ay"), ("b.txt", "bee")]

    jsonl = tmp_path / "docs.jsonl"
    jsonl.write_text('{"doc_id": 7, "text": "seven"}\n{"text": "no id"}\n', encoding="utf-8")
    with pytest.raises(ParseError) as info:
        list(read_collection(jsonl))
    assert info.value.line_no == 2
