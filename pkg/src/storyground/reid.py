"""Cross-frame re-identification: group per-frame detections into tracked entities.

Detections are compared only within their class ("objects of different classes
can not be matched"); person pairs with usable faces on both sides are scored
on face similarity and fall back to visual similarity otherwise. A detection
joins the best candidate entity only when its score clears the channel's
threshold and either no other candidate clears it too, or the best score beats
the mean of the other candidates' scores by z_gap standard deviations.
Everything is deterministic: frames ascending, raw ids lexicographic within a
frame, ties broken toward the earlier entity.
"""

from __future__ import annotations

import json
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .model import (
    BoundingBox,
    Detection,
    EntityId,
    EntityKind,
    MalformedIdError,
    TrackedEntity,
    parse_bbox,
    split_raw_id,
)

EMBEDDING_SIDECAR_VERSION = 1

DEFAULT_BACKGROUND_LABELS = frozenset({
    "sky", "building", "wall", "window", "floor", "ceiling", "road",
    "grass", "mountain", "sea", "tree", "snow", "sand",
})


class DimensionMismatchError(ValueError):
    """Raised when embeddings of different lengths are compared."""


class ZeroVectorError(ValueError):
    """Raised when a centroid collapses to (near) zero length."""


class SidecarFormatError(ValueError):
    """Raised when a detection or embedding file cannot be read."""


@dataclass(frozen=True)
class MatcherConfig:
    """Thresholds and class routing for the matcher.

    Face usability applies the resolution and confidence gates only when the
    metadata is present; a detection whose sidecar omits them but carries a
    face embedding is treated as already filtered upstream.
    """

    tau_visual: float = 0.75
    tau_face: float = 0.60
    z_gap: float = 1.0
    face_min_resolution: int = 128
    face_confidence_min: float = 0.5
    background_labels: frozenset[str] = DEFAULT_BACKGROUND_LABELS
    landmark_class: str = "landmark"

    def __post_init__(self) -> None:
        for name in ("tau_visual", "tau_face"):
            v = getattr(self, name)
            if not (0.0 < v <= 1.0):
                raise ValueError(f"{name} must be in (0, 1], got {v}")
        if self.z_gap < 0:
            raise ValueError(f"z_gap must be >= 0, got {self.z_gap}")
        if not (0.0 <= self.face_confidence_min <= 1.0):
            raise ValueError(f"face_confidence_min must be in [0, 1]")


@dataclass(frozen=True)
class CandidateScore:
    entity: EntityId
    score: float
    channel: str  # "face" | "visual"
    threshold: float


@dataclass(frozen=True)
class MatchRecord:
    """Why one detection landed where it did."""

    raw_id: str
    frame: int
    class_label: str
    candidates: tuple[CandidateScore, ...]
    entity: EntityId
    decision: str
    channel: Optional[str]  # channel of the winning comparison, None for new entities


@dataclass(frozen=True)
class MatchTrace:
    """One record per input detection, in processing order."""

    records: tuple[MatchRecord, ...]

    def to_json_dict(self) -> dict:
        return {
            "records": [
                {
                    "raw_id": r.raw_id,
                    "frame": r.frame,
                    "class": r.class_label,
                    "entity": str(r.entity),
                    "decision": r.decision,
                    "channel": r.channel,
                    "candidates": [
                        {"entity": str(c.entity), "score": c.score,
                         "channel": c.channel, "threshold": c.threshold}
                        for c in r.candidates
                    ],
                }
                for r in self.records
            ]
        }


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two unit vectors; validates dimensions and norms."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"vector shapes differ: {a.shape} vs {b.shape}")
    for v in (a, b):
        norm = float(np.linalg.norm(v))
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"cosine_similarity expects unit vectors, got norm {norm}")
    return float(np.dot(a, b))


def _centroid(vectors: Sequence[np.ndarray]) -> np.ndarray:
    mean = np.mean(np.stack(vectors), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm < 1e-9:
        raise ZeroVectorError("embedding centroid has (near) zero length")
    return mean / norm


def entity_centroid(entity: TrackedEntity) -> np.ndarray:
    """Renormalized mean of the entity's member embeddings."""
    return _centroid([d.embedding for d in entity.detections])


def detection_kind(det: Detection, config: MatcherConfig) -> EntityKind:
    """Which id family a detection belongs to.

    Landmarks are recognized by the class slot of the raw id (e.g.
    ``0-landmark-0``, whose label field holds the landmark name); persons map
    to characters, configured background labels to bg, everything else to obj.
    """
    try:
        _, raw_class, _ = split_raw_id(det.raw_id)
    except MalformedIdError:
        raw_class = det.class_label
    if raw_class == config.landmark_class:
        return EntityKind.LANDMARK
    if det.class_label == "person":
        return EntityKind.CHARACTER
    if det.class_label in config.background_labels:
        return EntityKind.BACKGROUND
    return EntityKind.OBJECT


def _usable_face(det: Detection, cfg: MatcherConfig) -> bool:
    if det.face_embedding is None:
        return False
    if det.face_resolution is not None and det.face_resolution < cfg.face_min_resolution:
        return False
    if det.face_confidence is not None and det.face_confidence < cfg.face_confidence_min:
        return False
    return True


class _Proto:
    """An entity being grown during matching."""

    __slots__ = ("kind", "seq", "detections", "vis_vectors", "face_vectors", "frames", "eid")

    def __init__(self, kind: EntityKind, seq: int) -> None:
        self.kind = kind
        self.seq = seq
        self.detections: list[Detection] = []
        self.vis_vectors: list[np.ndarray] = []
        self.face_vectors: list[np.ndarray] = []
        self.frames: set[int] = set()
        self.eid: Optional[EntityId] = None

    def add(self, det: Detection, face_usable: bool) -> None:
        self.detections.append(det)
        self.vis_vectors.append(det.embedding)
        if face_usable and det.face_embedding is not None:
            self.face_vectors.append(det.face_embedding)
        self.frames.add(det.frame)


def match_entities(detections: Sequence[Detection],
                   config: MatcherConfig | None = None
                   ) -> tuple[list[TrackedEntity], MatchTrace]:
    """Partition detections into cross-frame entities.

    Ids are assigned per kind in first-appearance order (persons become char,
    landmark inputs lm, configured background classes bg, the rest obj).
    """
    cfg = config or MatcherConfig()
    order = sorted(detections, key=lambda d: (d.frame, d.raw_id))
    groups: dict[tuple[EntityKind, str], list[_Proto]] = {}
    group_dims: dict[tuple[EntityKind, str], tuple[int, int | None]] = {}
    protos: list[_Proto] = []
    pending: list[tuple[Detection, list[CandidateScore], _Proto, str, Optional[str]]] = []

    for det in order:
        kind = detection_kind(det, cfg)
        key = (kind, det.class_label)
        group = groups.setdefault(key, [])
        _check_dims(group_dims, key, det)

        det_face = _usable_face(det, cfg)
        scored: list[tuple[_Proto, float, str, float]] = []
        for proto in group:
            if det.frame in proto.frames:
                continue
            if det_face and proto.face_vectors:
                channel, tau = "face", cfg.tau_face
                score = float(np.dot(det.face_embedding, _centroid(proto.face_vectors)))
            else:
                channel, tau = "visual", cfg.tau_visual
                score = float(np.dot(det.embedding, _centroid(proto.vis_vectors)))
            scored.append((proto, score, channel, tau))

        target, decision, channel = _decide(scored, cfg.z_gap, had_entities=bool(group))
        if target is None:
            target = _Proto(kind, len(protos))
            protos.append(target)
            group.append(target)
        target.add(det, det_face)
        pending.append((det, scored, target, decision, channel))

    _assign_ids(protos)

    records = []
    for det, scored, target, decision, channel in pending:
        candidates = tuple(CandidateScore(p.eid, s, ch, tau) for p, s, ch, tau in scored)
        records.append(MatchRecord(det.raw_id, det.frame, det.class_label,
                                   candidates, target.eid, decision, channel))

    entities = [TrackedEntity(p.eid, tuple(p.detections)) for p in protos]
    entities.sort(key=lambda e: e.id)
    return entities, MatchTrace(tuple(records))


def _check_dims(group_dims: dict, key, det: Detection) -> None:
    vis = det.embedding.size
    face = det.face_embedding.size if det.face_embedding is not None else None
    if key not in group_dims:
        group_dims[key] = (vis, face)
        return
    want_vis, want_face = group_dims[key]
    if vis != want_vis:
        raise DimensionMismatchError(
            f"{det.raw_id}: embedding length {vis} differs from {want_vis} "
            f"for class {key[1]!r}")
    if face is not None:
        if want_face is None:
            group_dims[key] = (want_vis, face)
        elif face != want_face:
            raise DimensionMismatchError(
                f"{det.raw_id}: face embedding length {face} differs from {want_face} "
                f"for class {key[1]!r}")


def _decide(scored: list, z_gap: float, had_entities: bool
            ) -> tuple[Optional[_Proto], str, Optional[str]]:
    if not scored:
        decision = "new:frame-conflict" if had_entities else "new:first-of-class"
        return None, decision, None
    best_proto, best_score, best_channel, best_tau = max(
        scored, key=lambda t: (t[1], -t[0].seq))
    if best_score < best_tau:
        return None, "new:below-threshold", None
    above = [t for t in scored if t[1] >= t[3]]
    if len(above) == 1:
        return best_proto, "join:unique-match", best_channel
    others = [t[1] for t in scored if t[0] is not best_proto]
    if best_score > statistics.fmean(others) + z_gap * statistics.pstdev(others):
        return best_proto, "join:distribution-gap", best_channel
    return None, "new:ambiguous", None


def _assign_ids(protos: list[_Proto]) -> None:
    counters = {kind: 0 for kind in EntityKind}
    for proto in protos:  # creation order == first-appearance order
        counters[proto.kind] += 1
        proto.eid = EntityId(proto.kind, counters[proto.kind])


# -- detection & embedding files ---------------------------------------------


def parse_detection_line(line: str) -> Optional[tuple[str, str, BoundingBox]]:
    """Parse one ``<frame>-<class>-<n>: <label>: x1,y1,x2,y2`` line.

    A leading "- " bullet is tolerated; blank lines and #-comments yield None.
    For landmark lines the label field holds the landmark name.
    """
    body = line.strip()
    if not body or body.startswith("#"):
        return None
    if body.startswith("- "):
        body = body[2:].strip()
    try:
        raw_id, rest = body.split(":", 1)
        label, coords = rest.rsplit(":", 1)
    except ValueError:
        raise SidecarFormatError(f"cannot parse detection line: {line.strip()!r}")
    raw_id = raw_id.strip()
    split_raw_id(raw_id)  # validates the id shape
    try:
        bbox = parse_bbox(coords)
    except ValueError as exc:
        raise SidecarFormatError(f"{raw_id}: {exc}")
    return raw_id, label.strip(), bbox


def _unit(values, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if arr.ndim != 1 or arr.size == 0 or norm < 1e-12:
        raise SidecarFormatError(f"{what}: embedding must be a non-empty non-zero vector")
    return arr / norm


def read_detections(detections_path: str | Path, embeddings_path: str | Path
                    ) -> list[Detection]:
    """Read a detections file plus its embedding sidecar into Detection objects.

    The sidecar is versioned JSON: {"version": 1, "embeddings": {raw_id:
    {"visual": [...], "face": [...] | null, "face_resolution": int | null,
    "face_confidence": float | null}}}. Vectors are renormalized on read.
    """
    with open(embeddings_path, encoding="utf-8") as fh:
        try:
            sidecar = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SidecarFormatError(f"embedding sidecar is not valid JSON: {exc}")
    if not isinstance(sidecar, dict) or sidecar.get("version") != EMBEDDING_SIDECAR_VERSION:
        raise SidecarFormatError(
            f"embedding sidecar must declare version {EMBEDDING_SIDECAR_VERSION}")
    table = sidecar.get("embeddings", {})

    detections = []
    with open(detections_path, encoding="utf-8") as fh:
        for line in fh:
            parsed = parse_detection_line(line)
            if parsed is None:
                continue
            raw_id, label, bbox = parsed
            entry = table.get(raw_id)
            if entry is None:
                raise SidecarFormatError(f"no embedding for detection {raw_id}")
            frame, _, _ = split_raw_id(raw_id)
            face = entry.get("face")
            detections.append(Detection(
                raw_id=raw_id,
                frame=frame,
                class_label=label,
                bbox=bbox,
                embedding=_unit(entry["visual"], raw_id),
                face_embedding=_unit(face, raw_id) if face is not None else None,
                face_resolution=entry.get("face_resolution"),
                face_confidence=entry.get("face_confidence"),
            ))
    return detections


def mapping_lines(trace: MatchTrace) -> list[str]:
    """Render ``<raw_id> → <entity_id>`` lines in processing order."""
    return [f"{r.raw_id} → {r.entity}" for r in trace.records]


def write_mapping(trace: MatchTrace, path: str | Path) -> None:
    Path(path).write_text("\n".join(mapping_lines(trace)) + ("\n" if trace.records else ""),
                          encoding="utf-8")
