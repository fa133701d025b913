"""Corpus-level statistics: persistence, reference counts, pronoun grounding,
phase densities. All aggregation is additive, so sample order never matters."""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple

from .model import EntityKind, NarrativePhase, RefTag, StorySample, TextRun
from .story import plain_text, story_references

# Pronoun inventories by grammatical person; third-person completed with the
# conventional object/possessive forms.
FIRST_PERSON_PRONOUNS = frozenset({"i", "me", "my", "our", "us", "we"})
SECOND_PERSON_PRONOUNS = frozenset({"you", "your"})
THIRD_PERSON_PRONOUNS = frozenset(
    {"he", "she", "they", "him", "her", "his", "hers", "their", "them", "its", "it"})
ALL_PRONOUNS = FIRST_PERSON_PRONOUNS | SECOND_PERSON_PRONOUNS | THIRD_PERSON_PRONOUNS

REF_CATEGORIES = ("character", "object", "setting", "action")

_STRIP_CHARS = "".join((
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~",
    "\u2018\u2019\u201c\u201d\u2013\u2014\u2026",  # curly quotes, dashes, ellipsis
))


class PronounStat(NamedTuple):
    occurrences: int
    grounded: int

    @property
    def rate(self) -> float:
        return self.grounded / self.occurrences if self.occurrences else 0.0


class PhaseDensity(NamedTuple):
    words: int
    refs: int
    by_category: dict[str, int]

    @property
    def per_100_words(self) -> float:
        return 100.0 * self.refs / self.words if self.words else 0.0

    def category_density(self, category: str) -> float:
        if not self.words:
            return 0.0
        return 100.0 * self.by_category.get(category, 0) / self.words


@dataclass(frozen=True)
class CorpusStats:
    """Aggregate statistics over a corpus of samples."""

    story_count: int
    mean_frames: float
    mean_words: float
    char_persistence: tuple[float, ...]  # fraction of characters in >= N frames, N = 1..
    obj_persistence: tuple[float, ...]
    refs_per_story: dict[str, float]  # by category plus "total"
    mean_characters_per_image: float
    mean_objects_per_image: float
    pronoun_grounding: dict[str, PronounStat]
    person_grounding: dict[str, PronounStat]
    phase_density: dict[str, PhaseDensity]
    phase_coverage: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "story_count": self.story_count,
            "mean_frames": self.mean_frames,
            "mean_words": self.mean_words,
            "char_persistence": list(self.char_persistence),
            "obj_persistence": list(self.obj_persistence),
            "refs_per_story": dict(self.refs_per_story),
            "mean_characters_per_image": self.mean_characters_per_image,
            "mean_objects_per_image": self.mean_objects_per_image,
            "pronoun_grounding": {
                p: {"occurrences": s.occurrences, "grounded": s.grounded, "rate": s.rate}
                for p, s in sorted(self.pronoun_grounding.items())
            },
            "person_grounding": {
                p: {"occurrences": s.occurrences, "grounded": s.grounded, "rate": s.rate}
                for p, s in self.person_grounding.items()
            },
            "phase_density": {
                phase: {"words": d.words, "refs": d.refs,
                        "per_100_words": d.per_100_words,
                        "by_category": {c: d.category_density(c) for c in REF_CATEGORIES}}
                for phase, d in self.phase_density.items()
            },
            "phase_coverage": dict(self.phase_coverage),
        }


def normalize_token(token: str) -> str:
    return token.strip(_STRIP_CHARS).lower()


def pronoun_person(pronoun: str) -> str:
    if pronoun in FIRST_PERSON_PRONOUNS:
        return "first"
    if pronoun in SECOND_PERSON_PRONOUNS:
        return "second"
    return "third"


def ref_category(tag: RefTag, ids) -> str:
    """Bucket a grounding tag the way the reference-count statistics do.

    Action and landmark/background tags map directly; entity tags split on the
    kind of their first id (character mention vs object reference).
    """
    if tag is RefTag.GDA:
        return "action"
    if tag is RefTag.GDL:
        return "setting"
    return "character" if ids[0].kind is EntityKind.CHARACTER else "object"


def _segment_text(segment) -> str:
    parts = [n.text if isinstance(n, TextRun) else n.inner for n in segment.nodes]
    return " ".join("".join(parts).split())


class StatsAccumulator:
    """Commutative accumulator behind corpus_stats; add() then finish()."""

    def __init__(self) -> None:
        self.stories = 0
        self.total_frames = 0
        self.total_words = 0
        self.char_appearances: Counter[int] = Counter()  # frames-per-entity histogram
        self.obj_appearances: Counter[int] = Counter()
        self.ref_totals: Counter[str] = Counter()
        self.total_images = 0
        self.total_char_rows = 0
        self.total_obj_rows = 0
        self.pronouns: dict[str, list[int]] = {p: [0, 0] for p in sorted(ALL_PRONOUNS)}
        self.phase_words: Counter[str] = Counter()
        self.phase_refs: Counter[str] = Counter()
        self.phase_refs_by_cat: Counter[tuple[str, str]] = Counter()
        self.phase_presence: Counter[str] = Counter()

    def add(self, sample: StorySample) -> None:
        self.stories += 1
        self.total_frames += sample.frame_count
        refs = story_references(sample.story)

        # words
        tokens = plain_text(sample.story).split()
        self.total_words += len(tokens)

        # persistence and per-image row counts
        images_per_entity: dict = {}
        for analysis in sample.analyses:
            self.total_images += 1
            self.total_char_rows += len(analysis.characters)
            self.total_obj_rows += len(analysis.objects)
            for eid, _ in analysis.entity_rows():
                images_per_entity.setdefault(eid, set()).add(analysis.image_index)
        for eid, images in images_per_entity.items():
            bucket = (self.char_appearances if eid.kind is EntityKind.CHARACTER
                      else self.obj_appearances)
            bucket[len(images)] += 1

        # reference counts
        for ref in refs:
            category = ref_category(ref.tag, ref.ids)
            self.ref_totals[category] += 1
            self.ref_totals["total"] += 1

        # pronoun grounding: occurrences from the full text, grounded ones from
        # the text inside gdo/gda spans
        for token in tokens:
            word = normalize_token(token)
            if word in ALL_PRONOUNS:
                self.pronouns[word][0] += 1
        for ref in refs:
            if ref.tag is RefTag.GDL:
                continue
            for token in ref.inner.split():
                word = normalize_token(token)
                if word in ALL_PRONOUNS:
                    self.pronouns[word][1] += 1

        # per-phase density; a phase owns the union of its images' segments and
        # overlapping phases each count the shared segments
        seg_words = {s.image_index: len(_segment_text(s).split())
                     for s in sample.story.segments}
        seg_refs: Counter[int] = Counter()
        seg_refs_by_cat: Counter[tuple[int, str]] = Counter()
        for ref in refs:
            seg_refs[ref.image_index] += 1
            seg_refs_by_cat[(ref.image_index, ref_category(ref.tag, ref.ids))] += 1
        phase_images: dict[str, set[int]] = {}
        for row in sample.narrative:
            phase_images.setdefault(row.phase.value, set()).update(row.images)
        for phase, images in phase_images.items():
            self.phase_presence[phase] += 1
            for idx in images:
                self.phase_words[phase] += seg_words.get(idx, 0)
                self.phase_refs[phase] += seg_refs.get(idx, 0)
                for cat in REF_CATEGORIES:
                    self.phase_refs_by_cat[(phase, cat)] += seg_refs_by_cat.get((idx, cat), 0)

    def finish(self) -> CorpusStats:
        n = self.stories

        def curve(appearances: Counter[int]) -> tuple[float, ...]:
            total = sum(appearances.values())
            if not total:
                return ()
            longest = max(appearances)
            out = []
            for at_least in range(1, longest + 1):
                count = sum(v for k, v in appearances.items() if k >= at_least)
                out.append(count / total)
            return tuple(out)

        refs_per_story = {cat: (self.ref_totals.get(cat, 0) / n if n else 0.0)
                          for cat in REF_CATEGORIES + ("total",)}
        pronouns = {p: PronounStat(occ, grd) for p, (occ, grd) in self.pronouns.items()
                    if occ}
        persons = {}
        for person in ("first", "second", "third"):
            occ = sum(s.occurrences for p, s in pronouns.items() if pronoun_person(p) == person)
            grd = sum(s.grounded for p, s in pronouns.items() if pronoun_person(p) == person)
            persons[person] = PronounStat(occ, grd)
        density = {}
        for phase in NarrativePhase:
            name = phase.value
            density[name] = PhaseDensity(
                self.phase_words.get(name, 0), self.phase_refs.get(name, 0),
                {c: self.phase_refs_by_cat.get((name, c), 0) for c in REF_CATEGORIES})
        coverage = {phase.value: (self.phase_presence.get(phase.value, 0) / n if n else 0.0)
                    for phase in NarrativePhase}
        return CorpusStats(
            story_count=n,
            mean_frames=self.total_frames / n if n else 0.0,
            mean_words=self.total_words / n if n else 0.0,
            char_persistence=curve(self.char_appearances),
            obj_persistence=curve(self.obj_appearances),
            refs_per_story=refs_per_story,
            mean_characters_per_image=(self.total_char_rows / self.total_images
                                       if self.total_images else 0.0),
            mean_objects_per_image=(self.total_obj_rows / self.total_images
                                    if self.total_images else 0.0),
            pronoun_grounding=pronouns,
            person_grounding=persons,
            phase_density=density,
            phase_coverage=coverage,
        )


def corpus_stats(samples: Iterable[StorySample]) -> CorpusStats:
    """Compute every corpus statistic over a stream of samples."""
    acc = StatsAccumulator()
    for sample in samples:
        acc.add(sample)
    return acc.finish()


def write_stats_tables(stats: CorpusStats, out_dir: str | Path) -> list[Path]:
    """Write the delimited views of the statistics (one CSV per table)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def table(name: str, header: list[str], rows: list[list]) -> None:
        path = out / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)

    longest = max(len(stats.char_persistence), len(stats.obj_persistence))
    table("persistence_curves.csv",
          ["min_frames", "char_fraction", "obj_fraction"],
          [[n + 1,
            stats.char_persistence[n] if n < len(stats.char_persistence) else "",
            stats.obj_persistence[n] if n < len(stats.obj_persistence) else ""]
           for n in range(longest)])
    table("refs_per_story.csv", ["category", "mean_refs_per_story"],
          [[c, stats.refs_per_story[c]] for c in REF_CATEGORIES + ("total",)])
    table("pronoun_grounding.csv",
          ["pronoun", "person", "occurrences", "grounded", "rate"],
          [[p, pronoun_person(p), s.occurrences, s.grounded, s.rate]
           for p, s in sorted(stats.pronoun_grounding.items())])
    table("phase_density.csv",
          ["phase", "words", "refs", "refs_per_100_words"]
          + [f"{c}_per_100_words" for c in REF_CATEGORIES],
          [[phase, d.words, d.refs, d.per_100_words]
           + [d.category_density(c) for c in REF_CATEGORIES]
           for phase, d in stats.phase_density.items()])
    table("phase_coverage.csv", ["phase", "fraction_of_stories"],
          [[phase, frac] for phase, frac in stats.phase_coverage.items()])
    return written
