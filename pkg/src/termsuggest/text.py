"""Term normalization and free-text tokenization."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path

_WHITESPACE = re.compile(r"\s+")
# \W is Unicode-aware; underscore counts as a word char in \w, so add it explicitly.
_PUNCT_OR_SPACE = re.compile(r"[\W_]+")


def parse_stopwords(text: str) -> frozenset[str]:
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.add(_WHITESPACE.sub(" ", line).lower())
    return frozenset(words)


def load_stopwords(path: str | Path) -> frozenset[str]:
    """Read a stopword file: one term per line, ``#`` starts a comment line."""
    return parse_stopwords(Path(path).read_text(encoding="utf-8"))


@lru_cache(maxsize=None)
def default_stopwords() -> frozenset[str]:
    data = resources.files("termsuggest").joinpath("data/stopwords_en.txt")
    return parse_stopwords(data.read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PipelineConfig:
    lowercase: bool = True
    min_token_length: int = 2
    stopwords: frozenset[str] = field(default_factory=default_stopwords)
    strip_punctuation: bool = True

    def __post_init__(self):
        if self.min_token_length < 1:
            raise ValueError("min_token_length must be >= 1")
        normalized = frozenset(
            _WHITESPACE.sub(" ", w.strip()).lower() for w in self.stopwords if w.strip()
        )
        object.__setattr__(self, "stopwords", normalized)

    def to_dict(self) -> dict:
        return {
            "lowercase": self.lowercase,
            "min_token_length": self.min_token_length,
            "stopwords": sorted(self.stopwords),
            "strip_punctuation": self.strip_punctuation,
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> PipelineConfig:
        data = dict(data or {})
        if "stopwords" in data and data["stopwords"] is not None:
            data["stopwords"] = frozenset(data["stopwords"])
        else:
            data.pop("stopwords", None)
        return cls(**data)


def normalize_term(raw: str, config: PipelineConfig | None = None) -> str | None:
    """Canonical form of a term; ``None`` if nothing is left after trimming.

    Controlled terms go through here whole: internal whitespace is collapsed
    but the phrase is never split.
    """
    config = config or PipelineConfig()
    term = _WHITESPACE.sub(" ", raw).strip()
    if not term:
        return None
    return term.lower() if config.lowercase else term


def tokenize_free_text(text: str, config: PipelineConfig | None = None) -> list[str]:
    config = config or PipelineConfig()
    splitter = _PUNCT_OR_SPACE if config.strip_punctuation else _WHITESPACE
    tokens = []
    for piece in splitter.split(text):
        term = normalize_term(piece, config)
        if term is None or len(term) < config.min_token_length:
            continue
        # stopwords are stored lowercase; compare case-insensitively when case is kept
        if (term if config.lowercase else term.lower()) in config.stopwords:
            continue
        tokens.append(term)
    return tokens
