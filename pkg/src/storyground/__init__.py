"""Toolkit for grounded visual-narrative corpora.

Parses the structured scene-analysis tables and the tagged story language,
validates full samples, re-identifies detections across frames, computes
grounding metrics and corpus statistics, and renders reports.
"""

from .cot import CotDocument, cot_entity_index, parse_cot, render_cot
from .diagnostics import ParseDiagnostic, ParseMode, Severity
from .metrics import (
    EmptyCorpusError,
    GroundingEval,
    average_precision,
    evaluate_story,
    grounding_sequence,
    match_detections,
    mean_average_precision,
    precision_recall,
)
from .model import (
    BoundingBox,
    CharacterRow,
    Detection,
    DuplicateEntityError,
    EntityId,
    EntityKind,
    GroundedStory,
    ImageAnalysis,
    MalformedIdError,
    NarrativePhase,
    NarrativePhaseRow,
    ObjectRow,
    Ref,
    RefTag,
    SettingElement,
    SettingRow,
    StorySample,
    StorySegment,
    TextRun,
    TrackedEntity,
    bbox_iou,
    format_entity_id,
    parse_bbox,
    parse_entity_id,
)
from .reid import (
    DimensionMismatchError,
    MatcherConfig,
    MatchTrace,
    ZeroVectorError,
    cosine_similarity,
    entity_centroid,
    match_entities,
)
from .stats import CorpusStats, StatsAccumulator, corpus_stats
from .story import (
    StoryReference,
    parse_story,
    plain_text,
    render_story,
    story_references,
    word_count,
)
from .transform import filter_unreferenced, truncate_to_images
from .validation import (
    Finding,
    FindingSeverity,
    SampleFailure,
    ValidationConfig,
    ValidationReport,
    validate_corpus,
    validate_sample,
)

__version__ = "0.1.0"

__all__ = [
    "BoundingBox", "CharacterRow", "CorpusStats", "CotDocument", "Detection",
    "DimensionMismatchError", "DuplicateEntityError", "EmptyCorpusError",
    "EntityId", "EntityKind", "Finding", "FindingSeverity", "GroundedStory",
    "GroundingEval", "ImageAnalysis", "MalformedIdError", "MatchTrace",
    "MatcherConfig", "NarrativePhase", "NarrativePhaseRow", "ObjectRow",
    "ParseDiagnostic", "ParseMode", "Ref", "RefTag", "SampleFailure",
    "SettingElement", "SettingRow", "Severity", "StatsAccumulator",
    "StoryReference", "StorySample", "StorySegment", "TextRun", "TrackedEntity",
    "ValidationConfig", "ValidationReport", "ZeroVectorError",
    "average_precision", "bbox_iou", "corpus_stats", "cosine_similarity",
    "cot_entity_index", "entity_centroid", "evaluate_story", "filter_unreferenced",
    "format_entity_id", "grounding_sequence", "match_detections", "match_entities",
    "mean_average_precision", "parse_bbox", "parse_cot", "parse_entity_id",
    "parse_story", "plain_text", "precision_recall", "render_cot", "render_story",
    "story_references", "truncate_to_images", "validate_corpus", "validate_sample",
    "word_count",
]
