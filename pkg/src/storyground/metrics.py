"""Grounding metrics between a reference and a candidate story.

Detections are (entity id, image index, box) triples taken from the grounding
tags in story order; matching is confidence-free, so precision/recall walk the
candidate sequence as-is and average precision interpolates over the standard
11 recall levels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .model import BoundingBox, EntityId, EntityKind, StorySample, bbox_iou
from .story import story_references

# One grounded detection: (entity id, image index, box)
GroundingItem = tuple[EntityId, int, BoundingBox]

DEFAULT_IOU_THRESHOLD = 0.5

RECALL_LEVELS = 11  # 0.0, 0.1, ... 1.0


class EmptyCorpusError(ValueError):
    """Raised when an aggregate is requested over zero stories."""


def match_detections(reference: Sequence, candidate: Sequence,
                     iou_threshold: float = DEFAULT_IOU_THRESHOLD
                     ) -> list[tuple[int, Optional[int]]]:
    """Greedily match candidate detections against the reference.

    Walks the candidate sequence in order; each candidate takes the unused
    reference detection of the same entity kind in the same image with the
    highest IoU >= threshold (earliest reference index on ties). Returns one
    (candidate_index, reference_index or None) pair per candidate, in order.
    """
    used: set[int] = set()
    matches: list[tuple[int, Optional[int]]] = []
    for ci, (cid, cimg, cbox) in enumerate(candidate):
        best_ri = None
        best_iou = iou_threshold
        for ri, (rid, rimg, rbox) in enumerate(reference):
            if ri in used or rid.kind is not cid.kind or rimg != cimg:
                continue
            iou = bbox_iou(cbox, rbox)
            if iou >= iou_threshold and (best_ri is None or iou > best_iou):
                best_ri = ri
                best_iou = iou
        if best_ri is not None:
            used.add(best_ri)
        matches.append((ci, best_ri))
    return matches


def _is_char(eid: EntityId) -> bool:
    return eid.kind is EntityKind.CHARACTER


@dataclass(frozen=True)
class PrecisionRecall:
    """Precision/recall per kind bucket (characters vs everything else).

    Empty denominators yield 0.0 and are flagged, e.g. "precision_char_undefined".
    """

    precision_char: float
    precision_obj: float
    precision_total: float
    recall_char: float
    recall_obj: float
    recall_total: float
    f1_total: float
    flags: tuple[str, ...] = ()


def _ratio(num: int, den: int, flag: str, flags: list[str]) -> float:
    if den == 0:
        flags.append(flag)
        return 0.0
    return num / den


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def precision_recall(matches: Sequence[tuple[int, Optional[int]]],
                     reference: Sequence, candidate: Sequence) -> PrecisionRecall:
    """Compute per-kind and total precision/recall/F1 from a match list."""
    tp = {"char": 0, "obj": 0}
    cand_n = {"char": 0, "obj": 0}
    ref_n = {"char": 0, "obj": 0}
    for cid, _, _ in candidate:
        cand_n["char" if _is_char(cid) else "obj"] += 1
    for rid, _, _ in reference:
        ref_n["char" if _is_char(rid) else "obj"] += 1
    for ci, ri in matches:
        if ri is not None:
            cid = candidate[ci][0]
            tp["char" if _is_char(cid) else "obj"] += 1

    flags: list[str] = []
    p_char = _ratio(tp["char"], cand_n["char"], "precision_char_undefined", flags)
    p_obj = _ratio(tp["obj"], cand_n["obj"], "precision_obj_undefined", flags)
    p_total = _ratio(tp["char"] + tp["obj"], cand_n["char"] + cand_n["obj"],
                     "precision_total_undefined", flags)
    r_char = _ratio(tp["char"], ref_n["char"], "recall_char_undefined", flags)
    r_obj = _ratio(tp["obj"], ref_n["obj"], "recall_obj_undefined", flags)
    r_total = _ratio(tp["char"] + tp["obj"], ref_n["char"] + ref_n["obj"],
                     "recall_total_undefined", flags)
    return PrecisionRecall(p_char, p_obj, p_total, r_char, r_obj, r_total,
                           f1_score(p_total, r_total), tuple(flags))


def average_precision(matches: Sequence[tuple[int, Optional[int]]],
                      reference: Sequence, candidate: Sequence) -> float:
    """11-point interpolated average precision over the candidate sequence.

    Candidates are taken in story order (no confidence scores); after each one
    we record (recall, precision), then average, over the recall levels
    0.0, 0.1, ..., 1.0, the maximum precision at recall >= level (0 when the
    level is unattainable). Recall comparisons are done in integers, so no
    float rounding can move a point across a level.
    """
    n_ref = len(reference)
    tp = 0
    # per prefix: (tp count, precision)
    points: list[tuple[int, float]] = []
    for i, (_, ri) in enumerate(matches):
        if ri is not None:
            tp += 1
        points.append((tp, tp / (i + 1)))

    total = 0.0
    for level in range(RECALL_LEVELS):  # recall level = level/10
        best = 0.0
        for tp_count, precision in points:
            # tp_count / n_ref >= level / 10, exactly
            if tp_count * 10 >= level * n_ref and (n_ref > 0 or level == 0):
                best = max(best, precision)
        total += best
    return total / RECALL_LEVELS


@dataclass(frozen=True)
class GroundingEval:
    """Metric outcome for one reference/candidate story pair."""

    precision_char: float
    precision_obj: float
    precision_total: float
    recall_char: float
    recall_obj: float
    recall_total: float
    f1_total: float
    ap: float
    flags: tuple[str, ...] = ()

    def to_json_dict(self) -> dict:
        return {
            "precision": {"char": self.precision_char, "obj": self.precision_obj,
                          "total": self.precision_total},
            "recall": {"char": self.recall_char, "obj": self.recall_obj,
                       "total": self.recall_total},
            "f1": self.f1_total,
            "ap": self.ap,
            "flags": list(self.flags),
        }


def evaluate_story(reference: Sequence, candidate: Sequence,
                   iou_threshold: float = DEFAULT_IOU_THRESHOLD) -> GroundingEval:
    """Match the two detection sequences and compute every per-story metric."""
    matches = match_detections(reference, candidate, iou_threshold)
    pr = precision_recall(matches, reference, candidate)
    ap = average_precision(matches, reference, candidate)
    return GroundingEval(pr.precision_char, pr.precision_obj, pr.precision_total,
                         pr.recall_char, pr.recall_obj, pr.recall_total,
                         pr.f1_total, ap, pr.flags)


def mean_average_precision(evals: Sequence[GroundingEval]) -> float:
    """Arithmetic mean of per-story AP; raises EmptyCorpusError on no stories."""
    if not evals:
        raise EmptyCorpusError("cannot average over zero stories")
    return sum(e.ap for e in evals) / len(evals)


def grounding_sequence(sample: StorySample) -> tuple[list, int]:
    """Extract (id, image, box) detections from a sample's grounding tags.

    Walks the story in document order; each id of each tag contributes one
    detection using the id's box from that image's tables. Ids with no row or
    no box in that image are skipped; the skip count is returned alongside.
    """
    items: list = []
    skipped = 0
    boxes: dict[tuple[int, EntityId], Optional[BoundingBox]] = {}
    for analysis in sample.analyses:
        for eid, bbox in analysis.entity_rows():
            boxes.setdefault((analysis.image_index, eid), bbox)
    for ref in story_references(sample.story):
        for eid in ref.ids:
            bbox = boxes.get((ref.image_index, eid))
            if bbox is None:
                skipped += 1
                continue
            items.append((eid, ref.image_index, bbox))
    return items, skipped
