"""Context-length transforms: drop unreferenced entities, cut stories by image count."""

from __future__ import annotations

import dataclasses

from .model import StorySample
from .story import story_references


def filter_unreferenced(sample: StorySample) -> StorySample:
    """Drop character/object rows whose id never occurs in a grounding tag.

    Setting rows carry no id and are kept; the narrative table is untouched.
    Idempotent, and never removes a row the story still references.
    """
    referenced = {eid for ref in story_references(sample.story) for eid in ref.ids}
    analyses = []
    for analysis in sample.analyses:
        analyses.append(dataclasses.replace(
            analysis,
            characters=tuple(r for r in analysis.characters if r.id in referenced),
            objects=tuple(r for r in analysis.objects if r.id in referenced),
        ))
    return dataclasses.replace(sample, analyses=tuple(analyses))


def truncate_to_images(sample: StorySample, max_images: int, *,
                       drop_empty_narrative_rows: bool = True,
                       refilter: bool = False) -> StorySample:
    """Keep only analyses and story segments for images 1..max_images.

    Narrative rows have their image sets intersected with the kept range;
    rows left referencing nothing are dropped unless drop_empty_narrative_rows
    is off. Prose inside kept segments is never rewritten. With refilter, rows
    for entities the shortened story no longer references are removed too.
    """
    if max_images < 1:
        raise ValueError(f"max_images must be >= 1, got {max_images}")
    if max_images >= sample.frame_count:
        return sample

    analyses = tuple(a for a in sample.analyses if a.image_index <= max_images)
    segments = tuple(s for s in sample.story.segments if s.image_index <= max_images)
    narrative = []
    for row in sample.narrative:
        kept = tuple(i for i in row.images if i <= max_images)
        if kept:
            narrative.append(dataclasses.replace(row, images=kept))
        elif not drop_empty_narrative_rows:
            narrative.append(row)
    dims = sample.image_dims[:max_images] if sample.image_dims is not None else None
    out = dataclasses.replace(
        sample,
        frame_count=min(max_images, sample.frame_count),
        analyses=analyses,
        narrative=tuple(narrative),
        story=dataclasses.replace(sample.story, segments=segments),
        image_dims=dims,
    )
    return filter_unreferenced(out) if refilter else out
