"""Shared data model: entity identifiers, boxes, scene-table rows, stories, detections.

Everything here is an immutable value object; nothing performs I/O. Parsers and
the validator construct these types and report problems as diagnostics, so the
constructors only enforce invariants that can never legitimately be violated by
data we still want to inspect (e.g. a box with x1 >= x2 is always rejected, but
a duplicate entity id inside one image is representable and left to rule R7).
"""

from __future__ import annotations

import functools
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Union

import numpy as np


class MalformedIdError(ValueError):
    """Raised when text does not spell a valid entity identifier."""


class DuplicateEntityError(ValueError):
    """Raised when one entity id occurs twice within a single image."""


class EntityKind(Enum):
    """The four identifier families used by the grounding tags."""

    CHARACTER = "char"
    OBJECT = "obj"
    LANDMARK = "lm"
    BACKGROUND = "bg"


_KIND_RANK = {k: i for i, k in enumerate(EntityKind)}
_ID_RE = re.compile(r"^(char|obj|lm|bg)([1-9][0-9]*)$")


@functools.total_ordering
@dataclass(frozen=True)
class EntityId:
    """Typed identifier naming one tracked entity across frames, e.g. ``char1``."""

    kind: EntityKind
    index: int

    def __post_init__(self) -> None:
        if not isinstance(self.index, int) or isinstance(self.index, bool) or self.index < 1:
            raise MalformedIdError(f"entity index must be a positive integer, got {self.index!r}")

    def __str__(self) -> str:
        return f"{self.kind.value}{self.index}"

    def __lt__(self, other: "EntityId") -> bool:
        if not isinstance(other, EntityId):
            return NotImplemented
        return (_KIND_RANK[self.kind], self.index) < (_KIND_RANK[other.kind], other.index)


def parse_entity_id(text: str) -> EntityId:
    """Parse ``char3`` / ``obj12`` / ``lm1`` / ``bg2`` into a typed id.

    Raises MalformedIdError for unknown prefixes, zero or negative indices and
    leading zeros; the four prefixes form a closed vocabulary.
    """
    m = _ID_RE.match(text)
    if m is None:
        raise MalformedIdError(f"not a valid entity id: {text!r}")
    return EntityId(EntityKind(m.group(1)), int(m.group(2)))


def format_entity_id(entity_id: EntityId) -> str:
    """Render an EntityId back to its text form; inverse of parse_entity_id."""
    return str(entity_id)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with exclusive-corner semantics (x1 < x2, y1 < y2)."""

    x1: int
    y1: int
    x2: int
    y2: int

    def __post_init__(self) -> None:
        for name in ("x1", "y1", "x2", "y2"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ValueError(f"bounding box coordinate {name} must be an integer, got {v!r}")
            if v < 0:
                raise ValueError(f"bounding box coordinate {name} must be >= 0, got {v}")
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate bounding box: ({self.x1},{self.y1},{self.x2},{self.y2})"
            )

    @property
    def area(self) -> int:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def fits_within(self, width: int, height: int) -> bool:
        return self.x2 <= width and self.y2 <= height

    def __str__(self) -> str:
        return f"{self.x1},{self.y1},{self.x2},{self.y2}"


_BBOX_RE = re.compile(r"^\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*$")


def parse_bbox(text: str) -> BoundingBox:
    """Parse ``x1,y1,x2,y2`` pixel coordinates. Raises ValueError when malformed."""
    m = _BBOX_RE.match(text)
    if m is None:
        raise ValueError(f"not a valid bounding box: {text!r}")
    return BoundingBox(*(int(g) for g in m.groups()))


def bbox_iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes; 0.0 when disjoint, 1.0 when identical."""
    ix = min(a.x2, b.x2) - max(a.x1, b.x1)
    iy = min(a.y2, b.y2) - max(a.y1, b.y1)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union


class SettingElement(Enum):
    """Closed taxonomy for rows of the setting table."""

    LOCATION = "Location"
    ENVIRONMENT = "Environment"
    LIGHTING = "Lighting"
    WEATHER = "Weather"
    TIME_PERIOD = "Time Period"
    ARCHITECTURE = "Architecture"
    INTERIOR_DESIGN = "Interior Design"
    ATMOSPHERE = "Atmosphere"
    BACKGROUND = "Background"


class NarrativePhase(Enum):
    """The five dramatic-arc phases used by the narrative structure table."""

    INTRODUCTION = "Introduction"
    DEVELOPMENT = "Development"
    CONFLICT = "Conflict"
    TURNING_POINT = "Turning Point"
    CONCLUSION = "Conclusion"


def _lookup_label(enum_cls, text: str):
    """Case-insensitive, whitespace-tolerant lookup of an enum by its label."""
    wanted = " ".join(text.split()).lower()
    for member in enum_cls:
        if member.value.lower() == wanted:
            return member
    return None


def parse_setting_element(text: str) -> Optional[SettingElement]:
    return _lookup_label(SettingElement, text)


def parse_narrative_phase(text: str) -> Optional[NarrativePhase]:
    return _lookup_label(NarrativePhase, text)


@dataclass(frozen=True)
class CharacterRow:
    """One row of a per-image character table."""

    id: EntityId
    name: str
    description: str
    emotions: str
    actions: str
    narrative_function: str
    bbox: Optional[BoundingBox] = None

    def __post_init__(self) -> None:
        if self.id.kind is not EntityKind.CHARACTER:
            raise ValueError(f"character row requires a char id, got {self.id}")


@dataclass(frozen=True)
class ObjectRow:
    """One row of a per-image object table; landmarks and backgrounds live here too."""

    id: EntityId
    description: str
    function: str
    interaction: str
    narrative_function: str
    bbox: Optional[BoundingBox] = None

    def __post_init__(self) -> None:
        if self.id.kind is EntityKind.CHARACTER:
            raise ValueError(f"object row cannot hold a char id, got {self.id}")


@dataclass(frozen=True)
class SettingRow:
    """One row of a per-image setting table; carries no entity id and no box."""

    element: SettingElement
    description: str
    mood: str
    time: str
    narrative_function: str


@dataclass(frozen=True)
class ImageAnalysis:
    """All scene tables for one image (1-based index).

    Duplicate entity ids across the character/object tables are representable;
    rule R7 of the validator reports them.
    """

    image_index: int
    characters: tuple[CharacterRow, ...] = ()
    objects: tuple[ObjectRow, ...] = ()
    settings: tuple[SettingRow, ...] = ()

    def __post_init__(self) -> None:
        if self.image_index < 1:
            raise ValueError(f"image index must be >= 1, got {self.image_index}")

    def entity_rows(self) -> Iterator[tuple[EntityId, Optional[BoundingBox]]]:
        for row in self.characters:
            yield row.id, row.bbox
        for row in self.objects:
            yield row.id, row.bbox

    def duplicate_ids(self) -> list[EntityId]:
        seen: set[EntityId] = set()
        dups: list[EntityId] = []
        for eid, _ in self.entity_rows():
            if eid in seen and eid not in dups:
                dups.append(eid)
            seen.add(eid)
        return dups


@dataclass(frozen=True)
class NarrativePhaseRow:
    """One row of the cross-image narrative structure table."""

    phase: NarrativePhase
    description: str
    key_events: str
    images: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.images:
            raise ValueError("narrative row must reference at least one image")
        ordered = tuple(sorted(set(self.images)))
        if ordered != self.images:
            object.__setattr__(self, "images", ordered)
        if self.images[0] < 1:
            raise ValueError("narrative image indices must be >= 1")


# Occurrences of each entity across images: id -> [(image_index, bbox), ...]
CotEntityIndex = dict[EntityId, list[tuple[int, Optional[BoundingBox]]]]


class RefTag(Enum):
    """Inline grounding tags: entity mention, character action, landmark/background."""

    GDO = "gdo"
    GDA = "gda"
    GDL = "gdl"


@dataclass(frozen=True)
class TextRun:
    """Plain prose between grounding tags."""

    text: str


@dataclass(frozen=True)
class Ref:
    """A grounded span: tag kind, one or more entity ids, and the tagged text.

    Kind compatibility between tag and ids (e.g. gdl wanting lm/bg) is checked
    by the story parser in strict mode and by validation rule R5, not here.
    """

    tag: RefTag
    ids: tuple[EntityId, ...]
    inner: str

    def __post_init__(self) -> None:
        if not self.ids:
            raise ValueError("grounding tag requires at least one entity id")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError(f"duplicate ids within one tag: {[str(i) for i in self.ids]}")


StoryNode = Union[TextRun, Ref]


@dataclass(frozen=True)
class StorySegment:
    """The story text attached to one image via its enclosing image tag."""

    image_index: int
    nodes: tuple[StoryNode, ...] = ()

    def __post_init__(self) -> None:
        if self.image_index < 1:
            raise ValueError(f"segment image index must be >= 1, got {self.image_index}")


@dataclass(frozen=True)
class GroundedStory:
    """A parsed grounded story: ordered image segments plus any stray outer text."""

    segments: tuple[StorySegment, ...] = ()
    preamble: str = ""
    postamble: str = ""

    def __post_init__(self) -> None:
        indices = [s.image_index for s in self.segments]
        if any(b <= a for a, b in zip(indices, indices[1:])):
            raise ValueError(f"segment image indices must be strictly increasing: {indices}")


@dataclass(frozen=True)
class StorySample:
    """One dataset record: per-image analyses, narrative table and grounded story.

    The corpus convention is frame_count >= 5 and analyses covering image
    indices 1..frame_count without gaps; those are conformance properties
    checked by the validator, not construction-time requirements.
    """

    sample_id: str
    frame_count: int
    analyses: tuple[ImageAnalysis, ...]
    narrative: tuple[NarrativePhaseRow, ...]
    story: GroundedStory
    image_dims: Optional[tuple[tuple[int, int], ...]] = None

    def __post_init__(self) -> None:
        if self.frame_count < 1:
            raise ValueError(f"frame_count must be >= 1, got {self.frame_count}")

    def analysis_for(self, image_index: int) -> Optional[ImageAnalysis]:
        for analysis in self.analyses:
            if analysis.image_index == image_index:
                return analysis
        return None

    def dims_for(self, image_index: int) -> Optional[tuple[int, int]]:
        if self.image_dims is None or not (1 <= image_index <= len(self.image_dims)):
            return None
        return self.image_dims[image_index - 1]


_RAW_ID_RE = re.compile(r"^(\d+)-(.+)-(\d+)$")

UNIT_NORM_TOLERANCE = 1e-6


def _as_unit_vector(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{what} must be a non-empty 1-D vector")
    norm = float(np.linalg.norm(arr))
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise ValueError(f"{what} must be unit-norm within {UNIT_NORM_TOLERANCE}, got norm {norm}")
    arr.setflags(write=False)
    return arr


def split_raw_id(raw_id: str) -> tuple[int, str, int]:
    """Split ``<frame>-<class>-<n>`` into its parts, e.g. ``0-person-0``."""
    m = _RAW_ID_RE.match(raw_id)
    if m is None:
        raise MalformedIdError(f"not a valid detection id: {raw_id!r}")
    return int(m.group(1)), m.group(2), int(m.group(3))


@dataclass(frozen=True, eq=False)
class Detection:
    """One per-frame detection with its visual embedding and optional face data.

    face_embedding is only meaningful for person detections; face_confidence is
    the face detector's score and gates usability together with resolution.
    """

    raw_id: str
    frame: int
    class_label: str
    bbox: BoundingBox
    embedding: np.ndarray
    face_embedding: Optional[np.ndarray] = None
    face_resolution: Optional[int] = None
    face_confidence: Optional[float] = None

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError(f"frame must be >= 0, got {self.frame}")
        object.__setattr__(self, "embedding", _as_unit_vector(self.embedding, "embedding"))
        if self.face_embedding is not None:
            object.__setattr__(
                self, "face_embedding", _as_unit_vector(self.face_embedding, "face embedding")
            )


@dataclass(frozen=True, eq=False)
class TrackedEntity:
    """A cross-frame identity: one entity id and its member detections."""

    id: EntityId
    detections: tuple[Detection, ...]

    def __post_init__(self) -> None:
        if not self.detections:
            raise ValueError("tracked entity requires at least one detection")
        labels = {d.class_label for d in self.detections}
        if len(labels) > 1:
            raise ValueError(f"tracked entity mixes class labels: {sorted(labels)}")
        frames = [d.frame for d in self.detections]
        if len(set(frames)) != len(frames):
            raise ValueError(f"tracked entity holds two detections in one frame: {frames}")
        if frames != sorted(frames):
            object.__setattr__(
                self, "detections", tuple(sorted(self.detections, key=lambda d: d.frame))
            )

    @property
    def class_label(self) -> str:
        return self.detections[0].class_label

    @property
    def frames(self) -> tuple[int, ...]:
        return tuple(d.frame for d in self.detections)
