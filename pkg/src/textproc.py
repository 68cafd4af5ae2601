import logging
import re
import unicodedata
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Optional

from nltk.stem import PorterStemmer

from src.config import AnalyzerSettings

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).resolve().parent / "data"
SMART_STOPLIST = DATA_DIR / "smart_stoplist.txt"

# letters/digits, with single internal hyphens or apostrophes
TOKEN_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*")
APOSTROPHES = str.maketrans({"’": "'", "‘": "'", "ʼ": "'"})

_stemmer = PorterStemmer(mode=PorterStemmer.ORIGINAL_ALGORITHM)


# -----------------------------
# 1) Stoplists
# -----------------------------
def read_word_file(path) -> set:
    """One lowercase word per line, '#' starts a comment."""
    words = set()
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                words.add(normalize(line))
    return words


@lru_cache(maxsize=8)
def load_stoplist(path: Optional[str] = None) -> frozenset:
    path = path or SMART_STOPLIST
    words = frozenset(read_word_file(path))
    logger.debug("loaded %d stopwords from %s", len(words), path)
    return words


# -----------------------------
# 2) Normalisation + tokenisation
# -----------------------------
def normalize(text: str) -> str:
    return unicodedata.normalize("NFKC", text).translate(APOSTROPHES).lower()


def tokenize(text: str, settings: AnalyzerSettings = None, stoplist: Iterable[str] = None) -> List[str]:
    """
    Lowercases and splits on non-alphanumeric boundaries, keeping internal
    hyphens/apostrophes. Tokens outside [min_len, max_len], purely numeric
    tokens (if configured) and stoplist members are dropped.
    """
    if not text:
        return []
    settings = settings or AnalyzerSettings()
    if stoplist is None:
        stoplist = load_stoplist(settings.stoplist_path)

    tokens = []
    for tok in TOKEN_RE.findall(normalize(text)):
        if not settings.min_len <= len(tok) <= settings.max_len:
            continue
        if settings.drop_numeric and tok.isdigit():
            continue
        if tok in stoplist:
            continue
        tokens.append(tok)
    return tokens


# -----------------------------
# 3) Stemming
# -----------------------------
@lru_cache(maxsize=200_000)
def stem(token: str) -> str:
    """Porter (1980) stem; words of length <= 2 are left alone as in the reference implementation."""
    if len(token) <= 2:
        return token
    return _stemmer.stem(token, to_lowercase=False)


class Analyzer:
    """Tokenizer + stoplist + optional stemming, bound to one AnalyzerSettings."""

    def __init__(self, settings: AnalyzerSettings = None, stoplist: Iterable[str] = None):
        self.settings = settings or AnalyzerSettings()
        self.stoplist = frozenset(stoplist) if stoplist is not None else load_stoplist(self.settings.stoplist_path)

    @property
    def stemming(self) -> bool:
        return self.settings.stemming

    def analyze(self, text: str) -> List[str]:
        tokens = tokenize(text, self.settings, self.stoplist)
        if self.settings.stemming:
            return [stem(t) for t in tokens]
        return tokens

    def stemmed(self) -> "Analyzer":
        """Same analysis with stemming switched on (the retrieval side)."""
        if self.settings.stemming:
            return self
        return Analyzer(self.settings.model_copy(update={"stemming": True}), self.stoplist)
