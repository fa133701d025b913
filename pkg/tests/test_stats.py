import random

import pytest

from storyground.model import (
    CharacterRow,
    EntityId,
    EntityKind,
    GroundedStory,
    ImageAnalysis,
    NarrativePhase,
    NarrativePhaseRow,
    Ref,
    RefTag,
    StorySample,
    StorySegment,
    TextRun,
)
from storyground.stats import (
    StatsAccumulator,
    corpus_stats,
    normalize_token,
    pronoun_person,
    ref_category,
    write_stats_tables,
)

from genlib import random_sample


def char(i):
    return EntityId(EntityKind.CHARACTER, i)


def one_image_sample(nodes, sample_id="s"):
    analysis = ImageAnalysis(1, (CharacterRow(char(1), "A", "d", "e", "a", "f"),))
    narrative = tuple(NarrativePhaseRow(p, "d", "k", (1,)) for p in NarrativePhase)
    return StorySample(sample_id, 1, (analysis,), narrative,
                       GroundedStory((StorySegment(1, tuple(nodes)),)))


class TestBasics:
    def test_mean_frames_single_sample(self, clean_sample):
        stats = corpus_stats([clean_sample])
        assert stats.story_count == 1
        assert stats.mean_frames == 5.0

    def test_mean_invariance_under_duplication(self, clean_sample):
        one = corpus_stats([clean_sample])
        two = corpus_stats([clean_sample, clean_sample])
        assert two.story_count == 2
        assert two.mean_frames == one.mean_frames
        assert two.mean_words == one.mean_words
        assert two.refs_per_story == one.refs_per_story
        assert two.char_persistence == one.char_persistence

    def test_order_insensitive(self):
        rng = random.Random(8)
        samples = [random_sample(rng, f"s{i}") for i in range(10)]
        forward = corpus_stats(samples)
        backward = corpus_stats(list(reversed(samples)))
        assert forward == backward

    def test_fixture_reference_counts(self, clean_sample):
        from storyground.story import story_references

        stats = corpus_stats([clean_sample])
        refs = story_references(clean_sample.story)
        assert stats.refs_per_story["total"] == len(refs)
        by_cat = {"character": 0, "object": 0, "setting": 0, "action": 0}
        for ref in refs:
            by_cat[ref_category(ref.tag, ref.ids)] += 1
        for cat, count in by_cat.items():
            assert stats.refs_per_story[cat] == count
        assert sum(by_cat.values()) == len(refs)


class TestPersistence:
    def test_curve_starts_at_one(self):
        rng = random.Random(9)
        stats = corpus_stats([random_sample(rng, f"s{i}") for i in range(10)])
        if stats.char_persistence:
            assert stats.char_persistence[0] == 1.0
        if stats.obj_persistence:
            assert stats.obj_persistence[0] == 1.0

    def test_curves_non_increasing(self):
        rng = random.Random(10)
        stats = corpus_stats([random_sample(rng, f"s{i}") for i in range(20)])
        for curve in (stats.char_persistence, stats.obj_persistence):
            assert all(a >= b for a, b in zip(curve, curve[1:]))

    def test_fixture_char_curve(self, clean_sample):
        # char1: 3 frames, char2: 3 frames, char3: 1, char4: 1, char5: 1
        stats = corpus_stats([clean_sample])
        assert stats.char_persistence[0] == 1.0
        assert stats.char_persistence[1] == pytest.approx(2 / 5)
        assert stats.char_persistence[2] == pytest.approx(2 / 5)
        assert len(stats.char_persistence) == 3

    def test_fixture_rows_per_image(self, clean_sample):
        # 9 character rows and 18 object rows across the five images
        stats = corpus_stats([clean_sample])
        assert stats.mean_characters_per_image == pytest.approx(9 / 5)
        assert stats.mean_objects_per_image == pytest.approx(18 / 5)


class TestPronouns:
    def test_all_grounded(self):
        nodes = [Ref(RefTag.GDO, (char(1),), "he"), TextRun(" slept.")]
        stats = corpus_stats([one_image_sample(nodes)])
        assert stats.pronoun_grounding["he"].rate == 1.0

    def test_ungrounded_occurrence(self):
        nodes = [Ref(RefTag.GDO, (char(1),), "he"), TextRun(" said he left.")]
        stats = corpus_stats([one_image_sample(nodes)])
        assert stats.pronoun_grounding["he"].occurrences == 2
        assert stats.pronoun_grounding["he"].grounded == 1

    def test_gdl_spans_do_not_ground(self):
        nodes = [Ref(RefTag.GDL, (EntityId(EntityKind.BACKGROUND, 1),), "it"),
                 TextRun(" rained.")]
        stats = corpus_stats([one_image_sample(nodes)])
        assert stats.pronoun_grounding["it"].occurrences == 1
        assert stats.pronoun_grounding["it"].grounded == 0

    def test_punctuation_and_case(self):
        nodes = [TextRun('"He," She said. HER!')]
        stats = corpus_stats([one_image_sample(nodes)])
        assert stats.pronoun_grounding["he"].occurrences == 1
        assert stats.pronoun_grounding["she"].occurrences == 1
        assert stats.pronoun_grounding["her"].occurrences == 1

    def test_person_rollup(self):
        nodes = [Ref(RefTag.GDO, (char(1),), "he"), TextRun(" told me we left.")]
        stats = corpus_stats([one_image_sample(nodes)])
        assert stats.person_grounding["third"].occurrences == 1
        assert stats.person_grounding["third"].grounded == 1
        assert stats.person_grounding["first"].occurrences == 2
        assert stats.person_grounding["first"].grounded == 0

    def test_normalize_token(self):
        assert normalize_token('"He,"') == "he"
        assert normalize_token("she’") == "she"
        assert normalize_token("it.") == "it"

    def test_person_classes(self):
        assert pronoun_person("we") == "first"
        assert pronoun_person("your") == "second"
        assert pronoun_person("their") == "third"


class TestPhases:
    def test_density_counts(self):
        nodes = [TextRun("one two three "),
                 Ref(RefTag.GDO, (char(1),), "four"),
                 TextRun(" five six seven eight nine ten")]
        stats = corpus_stats([one_image_sample(nodes)])
        # every phase owns image 1: 1 ref over 10 words -> 10 per 100 words
        for phase in stats.phase_density.values():
            assert phase.words == 10 and phase.refs == 1
            assert phase.per_100_words == pytest.approx(10.0)
            assert phase.category_density("character") == pytest.approx(10.0)

    def test_phase_coverage(self, clean_sample):
        stats = corpus_stats([clean_sample])
        assert all(v == 1.0 for v in stats.phase_coverage.values())

    def test_missing_phase_coverage(self):
        sample = one_image_sample([TextRun("hello there")])
        partial = StorySample(
            "p", 1, sample.analyses,
            tuple(r for r in sample.narrative
                  if r.phase is not NarrativePhase.CONFLICT),
            sample.story)
        stats = corpus_stats([sample, partial])
        assert stats.phase_coverage["Conflict"] == 0.5
        assert stats.phase_coverage["Introduction"] == 1.0


class TestOutput:
    def test_json_schema_complete(self, clean_sample):
        payload = corpus_stats([clean_sample]).to_json_dict()
        for key in ("story_count", "mean_frames", "mean_words", "char_persistence",
                    "obj_persistence", "refs_per_story", "mean_characters_per_image",
                    "mean_objects_per_image", "pronoun_grounding", "person_grounding",
                    "phase_density", "phase_coverage"):
            assert key in payload

    def test_csv_tables(self, clean_sample, tmp_path):
        stats = corpus_stats([clean_sample])
        written = write_stats_tables(stats, tmp_path)
        names = {p.name for p in written}
        assert names == {"persistence_curves.csv", "refs_per_story.csv",
                         "pronoun_grounding.csv", "phase_density.csv",
                         "phase_coverage.csv"}
        for path in written:
            lines = path.read_text().strip().split("\n")
            assert len(lines) >= 2

    def test_accumulator_merge_equivalence(self):
        rng = random.Random(77)
        samples = [random_sample(rng, f"s{i}") for i in range(8)]
        whole = corpus_stats(samples)
        acc = StatsAccumulator()
        for sample in samples:
            acc.add(sample)
        assert acc.finish() == whole
