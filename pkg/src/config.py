import json
import os
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from src.errors import ConfigError

DEFAULT_ENGINES = ["google", "bing", "duckduckgo"]
DEFAULT_GRID = [5, 10, 15, 20, 25, 30, 50]


# =========================
# 1) ANALYSIS
# =========================
class AnalyzerSettings(BaseModel):
    stoplist_path: Optional[str] = Field(None, description="Stoplist file (one word per line, '#' comments); default is the bundled SMART list")
    stemming: bool = Field(False, description="Apply Porter stemming to tokens")
    min_len: int = Field(2, ge=1, description="Minimum token length")
    max_len: int = Field(40, ge=1, description="Maximum token length")
    drop_numeric: bool = Field(True, description="Drop purely numeric tokens")

    @model_validator(mode="after")
    def _check_bounds(self):
        if self.min_len > self.max_len:
            raise ValueError(f"min_len ({self.min_len}) must be <= max_len ({self.max_len})")
        return self


# =========================
# 2) EXPANSION
# =========================
class KnnParams(BaseModel):
    k: int = Field(40, ge=1, description="Number of nearest-neighbour terms returned")
    l: int = Field(2, ge=0, description="Terms dropped per iteration")
    r0: int = Field(5, ge=1, description="Number of iterations")

    @model_validator(mode="after")
    def _check_k(self):
        if self.k < self.r0:
            raise ValueError(f"k ({self.k}) must be >= r0 ({self.r0})")
        return self


class ExpansionConfig(BaseModel):
    n_docs: int = Field(20, ge=1, description="Pseudo-relevant documents per engine (N)")
    m_intermediate: int = Field(100, ge=1, description="Intermediate tf-itf candidates (M)")
    knn: KnnParams = Field(default_factory=KnnParams)
    n_final: int = Field(15, ge=1, description="Final expansion terms (n)")
    engines: List[str] = Field(default_factory=lambda: list(DEFAULT_ENGINES), description="Engines whose pages form the corpus")
    dedup: bool = Field(False, description="Collapse URLs returned by several engines into one document")
    beta: float = Field(0.5, gt=0, description="Global weight factor for expansion terms at retrieval time")
    weight_floor: float = Field(0.1, gt=0, le=1, description="Lowest normalised expansion weight before beta")

    @field_validator("engines")
    @classmethod
    def _engines_nonempty(cls, v):
        if not v or any(not e.strip() for e in v):
            raise ValueError("engines must be a non-empty list of non-empty ids")
        if len(set(v)) != len(v):
            raise ValueError("engines must be distinct")
        return v

    @model_validator(mode="after")
    def _check_sizes(self):
        if not self.n_final <= self.knn.k <= self.m_intermediate:
            raise ValueError(
                f"need n_final <= knn.k <= m_intermediate, got {self.n_final}, {self.knn.k}, {self.m_intermediate}"
            )
        return self


# =========================
# 3) FETCH / PATHS / SWEEP
# =========================
class FetchSettings(BaseModel):
    provider: str = Field("snapshot", description="Result provider: snapshot | urllist | api")
    urllist_path: Optional[str] = Field(None, description="URL-list provider file (query_id TAB engine TAB rank TAB url)")
    api_endpoint: str = Field("https://www.searchapi.io/api/v1/search", description="Search API endpoint for the api provider")
    api_key_env: str = Field("SEARCH_API_KEY", description="Environment variable holding the search API key")
    blocklist_path: Optional[str] = Field(None, description="Extra blocklist file merged with the bundled list")
    timeout: float = Field(15.0, gt=0, description="Per-request timeout in seconds")
    retries: int = Field(1, ge=0, description="Retries per failed fetch")
    politeness_delay: float = Field(0.5, ge=0, description="Minimum seconds between requests to the same host")
    max_in_flight: int = Field(8, ge=1, description="Concurrent fetches")


class PathSettings(BaseModel):
    snapshot: Optional[str] = Field(None, description="Snapshot file (JSONL)")
    collection: Optional[str] = Field(None, description="Target collection: directory of text files, JSONL or TREC SGML file")
    index: Optional[str] = Field(None, description="Index artifact path (defaults to <out_dir>/index.json)")
    topics: Optional[str] = Field(None, description="Topics file (query_id TAB title, or TREC topic SGML)")
    qrels: Optional[str] = Field(None, description="Qrels file (query_id 0 doc_id grade)")
    out_dir: str = Field("output", description="Output directory")


class SweepSettings(BaseModel):
    docs_grid: List[int] = Field(default_factory=lambda: list(DEFAULT_GRID), description="Grid of pseudo-relevant document counts")
    terms_grid: List[int] = Field(default_factory=lambda: list(DEFAULT_GRID), description="Grid of expansion term counts")
    models: List[str] = Field(default_factory=lambda: ["bm25", "tfidf"], description="Weighting models evaluated per grid point")
    workers: int = Field(1, ge=1, description="Grid points executed in parallel")

    @field_validator("docs_grid", "terms_grid", "models")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("sweep grids and model lists must be non-empty")
        return v


class ExperimentConfig(BaseModel):
    expansion: ExpansionConfig = Field(default_factory=ExpansionConfig)
    analyzer: AnalyzerSettings = Field(default_factory=AnalyzerSettings)
    fetch: FetchSettings = Field(default_factory=FetchSettings)
    paths: PathSettings = Field(default_factory=PathSettings)
    sweep: SweepSettings = Field(default_factory=SweepSettings)
    model: str = Field("bm25", description="Weighting model for search")
    model_params: Dict[str, float] = Field(default_factory=dict, description="Weighting model parameters, e.g. k1, b")
    r_max: int = Field(1000, ge=1, description="Ranked-list depth")
    run_tag: str = Field("wkqe", description="Run tag written in the last run-file column")
    gm_epsilon: float = Field(1e-5, gt=0, description="Floor applied to AP values in GM_MAP")
    seed: int = Field(0, description="Reserved")


# =========================
# 4) LOADING + OVERRIDES
# =========================
def _set_dotted(data: dict, dotted: str, value: Any):
    node = data
    keys = dotted.split(".")
    for key in keys[:-1]:
        node = node.setdefault(key, {})
    node[keys[-1]] = value


def load_config(path=None, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Reads the JSON config file (if any) and applies dotted-key overrides on top.
    Overrides win over file values.
    """
    data: dict = {}
    if path:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}")

    for dotted, value in (overrides or {}).items():
        if value is not None:
            _set_dotted(data, dotted, value)

    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}")


def require_paths(config: ExperimentConfig, *keys: str):
    """Checks that the named path settings are set and exist."""
    for key in keys:
        value = getattr(config.paths, key)
        if not value:
            raise ConfigError(f"paths.{key} is required for this command")
        if not os.path.exists(value):
            raise ConfigError(f"paths.{key} = {value} does not exist")


def iter_config_keys(model=ExperimentConfig, prefix: str = ""):
    """Yields (dotted_key, field_info) for every leaf config key."""
    for name, field in model.model_fields.items():
        annotation = field.annotation
        if isinstance(annotation, type) and issubclass(annotation, BaseModel):
            yield from iter_config_keys(annotation, f"{prefix}{name}.")
        else:
            yield f"{prefix}{name}", field
