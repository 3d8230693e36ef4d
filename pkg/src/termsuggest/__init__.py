"""Search term suggestion built from OAI-PMH harvested Dublin Core metadata."""

from .engine import (
    CooccurrenceIndex,
    IndexBuilder,
    Metric,
    Recommendation,
    RecommendationList,
    build_index,
    recommend,
    recommend_multi,
    similarity,
)
from .metadata import DublinCoreRecord, FieldExtraction, FieldMapping, parse_oai_dc, select_fields
from .text import PipelineConfig, normalize_term, tokenize_free_text

__version__ = "0.1.0"

__all__ = [
    "CooccurrenceIndex",
    "DublinCoreRecord",
    "FieldExtraction",
    "FieldMapping",
    "IndexBuilder",
    "Metric",
    "PipelineConfig",
    "Recommendation",
    "RecommendationList",
    "build_index",
    "normalize_term",
    "parse_oai_dc",
    "recommend",
    "recommend_multi",
    "select_fields",
    "similarity",
    "tokenize_free_text",
]
