import random

import pytest

from src.config import AnalyzerSettings
from src.textproc import Analyzer, load_stoplist, normalize, stem, tokenize


def test_smart_stoplist_is_bundled():
    words = load_stoplist()
    assert len(words) > 500
    assert {"the", "and", "of", "about", "yourselves"} <= words
    assert "retrieval" not in words


def test_tokenize_lowercases_and_drops_stopwords():
    assert tokenize("The Quick brown FOX and the lazy dog") == ["quick", "brown", "fox", "lazy", "dog"]


def test_tokenize_drops_punctuation_and_stoplist_words():
    assert tokenize("The Taj, in Mumbai!", stoplist={"the", "in"}) == ["taj", "mumbai"]


def test_tokens_satisfy_token_rules_on_random_text():
    rng = random.Random(31)
    stoplist = load_stoplist()
    pieces = ["The", "and", "x", "Q", "2024", "web-pages", "don't", "--", "'quoted'", "a-", "!", "...", ",",
              "Search", "engines", "of", "ranking", "7th", "e-mail", "n", "café"]
    settings = AnalyzerSettings(min_len=2, max_len=8)
    for _ in range(300):
        text = "".join(rng.choice(pieces) + rng.choice([" ", "", "\n", "-", "'"]) for _ in range(rng.randint(0, 20)))
        for tok in tokenize(text, settings):
            assert settings.min_len <= len(tok) <= settings.max_len
            assert tok == tok.lower()
            assert tok[0].isalnum() and tok[-1].isalnum()
            assert all(c.isalnum() or c in "-'" for c in tok)
            assert not tok.isdigit()
            assert tok not in stoplist


def test_tokenize_keeps_internal_hyphens_and_apostrophes():
    tokens = tokenize("state-of-the-art systems don’t fail")
    assert "state-of-the-art" in tokens
    assert "fail" in tokens


def test_tokenize_length_and_numeric_filters():
    settings = AnalyzerSettings(min_len=3, max_len=6)
    assert tokenize("ab abc 2024 abcdefg engine", settings, stoplist=()) == ["abc", "engine"]

    keep_numbers = AnalyzerSettings(drop_numeric=False)
    assert tokenize("year 2024", keep_numbers, stoplist=()) == ["year", "2024"]


def test_tokenize_empty_text():
    assert tokenize("") == []
    assert tokenize("   \n\t ") == []


def test_normalize_folds_compatibility_forms():
    assert normalize("ＡＢＣ’s") == "abc's"


@pytest.mark.parametrize(
    "word, expected",
    [
        ("caresses", "caress"),
        ("ponies", "poni"),
        ("relational", "relat"),
        ("generalization", "gener"),
        ("running", "run"),
        ("hopeful", "hope"),
    ],
)
def test_porter_stems(word, expected):
    assert stem(word) == expected


def test_agriculture_stem():
    assert stem("agriculture") == "agricultur"


@pytest.mark.parametrize(
    "word",
    ["caresses", "ponies", "relational", "generalization", "running", "hopeful",
     "agriculture", "connection", "retrieval", "mumbai", "hope", "run"],
)
def test_stem_is_stable_on_its_own_output(word):
    once = stem(word)
    assert stem(once) == once


def test_short_words_are_not_stemmed():
    assert stem("as") == "as"
    assert stem("is") == "is"


def test_analyzer_stemming_switch():
    plain = Analyzer()
    assert not plain.stemming
    assert plain.analyze("connected connections") == ["connected", "connections"]

    stemmed = plain.stemmed()
    assert stemmed.stemming
    assert stemmed.analyze("connected connections") == ["connect", "connect"]
    assert stemmed.stemmed() is stemmed


def test_analyzer_custom_stoplist(tmp_path):
    stoplist = tmp_path / "stop.txt"
    stoplist.write_text("# custom\nalpha\nBeta\n", encoding="utf-8")
    analyzer = Analyzer(AnalyzerSettings(stoplist_path=str(stoplist)))
    assert analyzer.analyze("alpha beta gamma the") == ["gamma", "the"]


def test_min_len_above_max_len_is_rejected():
    with pytest.raises(ValueError):
        AnalyzerSettings(min_len=5, max_len=3)
