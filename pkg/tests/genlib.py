"""Shared test helpers: sample generators and independent oracles.

The oracles here are deliberately naive (brute force, exhaustive enumeration,
fractions) and never share code with the implementations they check.
"""

from __future__ import annotations

import math
import random
from fractions import Fraction

import numpy as np

from storyground.model import (
    BoundingBox,
    CharacterRow,
    EntityId,
    EntityKind,
    GroundedStory,
    ImageAnalysis,
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
)

WORDS = ("the", "old", "river", "lantern", "keeper", "walked", "toward", "dusk",
         "garden", "stone", "quiet", "voice", "between", "shadows", "warm",
         "letter", "window", "they", "he", "she", "finally", "turned")


def words(rng: random.Random, lo: int = 1, hi: int = 5) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(lo, hi)))


def random_bbox(rng: random.Random, width: int = 800, height: int = 600) -> BoundingBox:
    x1 = rng.randrange(0, width - 10)
    y1 = rng.randrange(0, height - 10)
    x2 = rng.randrange(x1 + 1, width + 1)
    y2 = rng.randrange(y1 + 1, height + 1)
    return BoundingBox(x1, y1, x2, y2)


def random_sample(rng: random.Random, sample_id: str = "gen",
                  with_boxes: bool = False) -> StorySample:
    """A structurally valid sample: same-image grounding, all five phases.

    Passes rules R1-R7 by construction, which is what the transform-law and
    validator-preservation properties need as a baseline.
    """
    frame_count = rng.randint(1, 6)
    dims = ((800, 600),) * frame_count if with_boxes else None
    analyses = []
    segments = []
    char_pool = [EntityId(EntityKind.CHARACTER, i) for i in range(1, 7)]
    other_pool = ([EntityId(EntityKind.OBJECT, i) for i in range(1, 7)]
                  + [EntityId(EntityKind.LANDMARK, i) for i in range(1, 3)]
                  + [EntityId(EntityKind.BACKGROUND, i) for i in range(1, 3)])
    for image in range(1, frame_count + 1):
        chars = rng.sample(char_pool, rng.randint(0, 2))
        others = rng.sample(other_pool, rng.randint(0, 3))
        box = (lambda: random_bbox(rng)) if with_boxes else (lambda: None)
        characters = tuple(
            CharacterRow(c, words(rng, 1, 2), words(rng), words(rng, 1, 2),
                         words(rng), words(rng, 1, 2), box())
            for c in chars)
        objects = tuple(
            ObjectRow(o, words(rng, 1, 2), words(rng, 1, 2), words(rng, 1, 2),
                      words(rng), box())
            for o in others)
        settings = tuple(
            SettingRow(rng.choice(list(SettingElement)), words(rng), words(rng, 1, 2),
                       words(rng, 1, 1), words(rng))
            for _ in range(rng.randint(0, 2)))
        analyses.append(ImageAnalysis(image, characters, objects, settings))

        nodes: list = [TextRun(words(rng) + " ")]
        rows = [(r.id, "char") for r in characters] + [(r.id, "other") for r in objects]
        rng.shuffle(rows)
        for eid, family in rows[:rng.randint(0, len(rows))]:
            if family == "char":
                tag = rng.choice((RefTag.GDO, RefTag.GDA))
            elif eid.kind is EntityKind.OBJECT:
                tag = RefTag.GDO
            else:
                tag = RefTag.GDL
            nodes.append(Ref(tag, (eid,), words(rng, 1, 3)))
            nodes.append(TextRun(" " + words(rng, 1, 3) + " "))
        nodes[-1] = TextRun(nodes[-1].text.rstrip())
        nodes[0] = TextRun(nodes[0].text.lstrip())
        segments.append(StorySegment(image, tuple(n for n in nodes
                                                  if not (isinstance(n, TextRun) and not n.text))))

    phases = list(NarrativePhase)
    narrative = tuple(
        NarrativePhaseRow(phase, words(rng), words(rng),
                          tuple(sorted(rng.sample(range(1, frame_count + 1),
                                                  rng.randint(1, frame_count)))))
        for phase in phases)
    return StorySample(sample_id, frame_count, tuple(analyses), narrative,
                       GroundedStory(tuple(segments)), dims)


# -- 11-point AP oracle --------------------------------------------------------


def oracle_eleven_point_ap(matches, n_ref: int) -> float:
    """Brute-force 11-point interpolated AP over exact rational recall points."""
    points = []
    tp = 0
    for i, (_, ri) in enumerate(matches):
        if ri is not None:
            tp += 1
        recall = Fraction(tp, n_ref) if n_ref else Fraction(0)
        points.append((recall, float(Fraction(tp, i + 1))))
    total = 0.0
    for k in range(11):
        level = Fraction(k, 10)
        if n_ref == 0 and k > 0:
            reachable = []
        else:
            reachable = [p for r, p in points if r >= level]
        total += max(reachable, default=0.0)
    return total / 11


# -- set-partition oracle for the matcher ---------------------------------------


def set_partitions(items: list):
    """Yield every partition of items as a list of blocks."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [first]] + part[i + 1:]
        yield [[first]] + part


def valid_partitions(detections, tau: float):
    """Partitions where blocks are class-pure, frame-unique and similarity-coherent:
    every within-block pair above tau, every cross-block same-class pair below."""
    valid = []
    for part in set_partitions(list(detections)):
        ok = True
        for block in part:
            labels = {d.class_label for d in block}
            frames = [d.frame for d in block]
            if len(labels) > 1 or len(set(frames)) != len(frames):
                ok = False
                break
            for a in block:
                for b in block:
                    if a is not b and float(np.dot(a.embedding, b.embedding)) <= tau:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if not ok:
            continue
        for i, block_a in enumerate(part):
            for block_b in part[i + 1:]:
                for a in block_a:
                    for b in block_b:
                        if (a.class_label == b.class_label
                                and float(np.dot(a.embedding, b.embedding)) >= tau):
                            ok = False
        if ok:
            valid.append([sorted(d.raw_id for d in block) for block in part])
    return [sorted(part) for part in valid]


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Standard ARI from the pair-counting contingency table."""
    assert len(labels_a) == len(labels_b)
    n = len(labels_a)
    table: dict[tuple, int] = {}
    a_sizes: dict = {}
    b_sizes: dict = {}
    for la, lb in zip(labels_a, labels_b):
        table[(la, lb)] = table.get((la, lb), 0) + 1
        a_sizes[la] = a_sizes.get(la, 0) + 1
        b_sizes[lb] = b_sizes.get(lb, 0) + 1
    sum_comb = sum(math.comb(v, 2) for v in table.values())
    sum_a = sum(math.comb(v, 2) for v in a_sizes.values())
    sum_b = sum(math.comb(v, 2) for v in b_sizes.values())
    total = math.comb(n, 2)
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0
    return (sum_comb - expected) / (maximum - expected)


def unit(vector) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    return arr / np.linalg.norm(arr)


def planted_instance(rng: random.Random, tau: float = 0.75, dim: int = 12,
                     max_detections: int = 8):
    """Detections drawn from well-separated clusters plus the true labeling.

    Guarantees every intra-cluster cosine > tau + 0.1 and every same-class
    inter-cluster cosine < tau - 0.2 (resampling until both margins hold).
    """
    from storyground.model import Detection

    while True:
        n_clusters = rng.randint(1, 3)
        labels_pool = ["person", "car", "dog"]
        cluster_class = [rng.choice(labels_pool) for _ in range(n_clusters)]
        sizes = []
        remaining = rng.randint(n_clusters, max_detections)
        for i in range(n_clusters):
            most = remaining - (n_clusters - i - 1)
            size = rng.randint(1, max(1, most))
            sizes.append(size)
            remaining -= size
        centers = [unit([rng.gauss(0, 1) for _ in range(dim)]) for _ in range(n_clusters)]
        members = []
        for ci in range(n_clusters):
            for mi in range(sizes[ci]):
                noise = np.array([rng.gauss(0, 0.05) for _ in range(dim)])
                members.append((ci, unit(centers[ci] + noise)))
        ok = True
        for i, (ci, vi) in enumerate(members):
            for j, (cj, vj) in enumerate(members):
                if i >= j:
                    continue
                cos = float(np.dot(vi, vj))
                if ci == cj and cos <= tau + 0.1:
                    ok = False
                if ci != cj and cluster_class[ci] == cluster_class[cj] and cos >= tau - 0.2:
                    ok = False
        if not ok:
            continue
        detections = []
        truth = []
        frame_of_cluster = [0] * n_clusters
        order = list(range(len(members)))
        rng.shuffle(order)
        for serial, idx in enumerate(order):
            ci, vec = members[idx]
            frame = frame_of_cluster[ci]
            frame_of_cluster[ci] += 1
            raw = f"{frame}-{cluster_class[ci]}-{serial}"
            detections.append(Detection(raw, frame, cluster_class[ci],
                                        BoundingBox(0, 0, 10, 10), vec))
            truth.append(ci)
        return detections, truth
