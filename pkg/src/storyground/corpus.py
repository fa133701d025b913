"""Corpus record framing: JSON-lines interchange and a directory-tree layout.

A record carries the raw texts (scene analysis with its <think> wrapper, the
tagged story) plus framing metadata; parsing into typed samples happens here
too, so callers can stream a corpus file straight into the validator or the
statistics accumulator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

from .cot import CotDocument, parse_cot, render_cot
from .diagnostics import ParseDiagnostic, ParseMode
from .model import StorySample
from .story import parse_story, render_story
from .validation import SampleFailure

RECORD_VERSION = 1

JSON_LINES = "jsonl"
DIRECTORY_TREE = "dir"


@dataclass(frozen=True)
class SampleRecord:
    """One stored dataset record; texts are kept verbatim."""

    sample_id: str
    cot_text: str
    story_text: str
    frame_count: int
    image_dims: Optional[tuple[tuple[int, int], ...]] = None
    detections_text: Optional[str] = None
    mapping_text: Optional[str] = None


@dataclass(frozen=True)
class CorpusDiagnostic:
    """A per-record problem found while reading a corpus; never fatal."""

    location: str
    message: str


class CorpusFormatError(ValueError):
    """Raised for unusable corpus paths or unknown formats."""


def _detect_format(path: Path) -> str:
    return DIRECTORY_TREE if path.is_dir() else JSON_LINES


def read_corpus(path: str | Path, fmt: Optional[str] = None,
                diagnostics: Optional[list[CorpusDiagnostic]] = None
                ) -> Iterator[SampleRecord]:
    """Lazily yield records from a corpus file or directory.

    Malformed records are reported into the diagnostics list (when given) and
    skipped; the stream continues. Raises OSError for unreadable paths.
    """
    root = Path(path)
    if not root.exists():
        raise FileNotFoundError(f"corpus path does not exist: {root}")
    fmt = fmt or _detect_format(root)
    if fmt == JSON_LINES:
        yield from _read_jsonl(root, diagnostics)
    elif fmt == DIRECTORY_TREE:
        yield from _read_tree(root, diagnostics)
    else:
        raise CorpusFormatError(f"unknown corpus format: {fmt!r}")


def _note(diagnostics: Optional[list[CorpusDiagnostic]], location: str, message: str) -> None:
    if diagnostics is not None:
        diagnostics.append(CorpusDiagnostic(location, message))


def _record_from_dict(obj: dict, location: str,
                      diagnostics: Optional[list[CorpusDiagnostic]]
                      ) -> Optional[SampleRecord]:
    if not isinstance(obj, dict):
        _note(diagnostics, location, "record is not a JSON object")
        return None
    version = obj.get("version", RECORD_VERSION)
    if version != RECORD_VERSION:
        _note(diagnostics, location, f"unsupported record version {version!r}")
        return None
    try:
        sample_id = str(obj["sample_id"])
        cot_text = obj["cot"]
        story_text = obj["story"]
        frame_count = int(obj["frame_count"])
    except (KeyError, TypeError, ValueError) as exc:
        _note(diagnostics, location, f"missing or malformed field: {exc}")
        return None
    if not isinstance(cot_text, str) or not isinstance(story_text, str) or frame_count < 1:
        _note(diagnostics, location, "cot/story must be text and frame_count >= 1")
        return None
    dims = obj.get("image_dims")
    image_dims = None
    if dims is not None:
        try:
            image_dims = tuple((int(w), int(h)) for w, h in dims)
        except (TypeError, ValueError):
            _note(diagnostics, location, "image_dims must be [[width, height], ...]")
            return None
    return SampleRecord(sample_id, cot_text, story_text, frame_count, image_dims,
                        obj.get("detections"), obj.get("mapping"))


def _read_jsonl(path: Path, diagnostics) -> Iterator[SampleRecord]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            location = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                _note(diagnostics, location, f"invalid JSON: {exc}")
                continue
            record = _record_from_dict(obj, location, diagnostics)
            if record is not None:
                yield record


def _read_tree(root: Path, diagnostics) -> Iterator[SampleRecord]:
    for sample_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        location = str(sample_dir)
        meta_path = sample_dir / "meta.json"
        cot_path = sample_dir / "cot.md"
        story_path = sample_dir / "story.txt"
        if not (meta_path.exists() and cot_path.exists() and story_path.exists()):
            _note(diagnostics, location, "sample directory needs meta.json, cot.md, story.txt")
            continue
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            _note(diagnostics, location, f"unreadable meta.json: {exc}")
            continue
        meta = dict(meta)
        meta.setdefault("sample_id", sample_dir.name)
        meta["cot"] = cot_path.read_text(encoding="utf-8")
        meta["story"] = story_path.read_text(encoding="utf-8")
        det_path = sample_dir / "detections.txt"
        if det_path.exists():
            meta.setdefault("detections", det_path.read_text(encoding="utf-8"))
        map_path = sample_dir / "mapping.txt"
        if map_path.exists():
            meta.setdefault("mapping", map_path.read_text(encoding="utf-8"))
        record = _record_from_dict(meta, location, diagnostics)
        if record is not None:
            yield record


def _record_to_dict(record: SampleRecord) -> dict:
    obj: dict = {
        "version": RECORD_VERSION,
        "sample_id": record.sample_id,
        "frame_count": record.frame_count,
        "cot": record.cot_text,
        "story": record.story_text,
    }
    if record.image_dims is not None:
        obj["image_dims"] = [list(d) for d in record.image_dims]
    if record.detections_text is not None:
        obj["detections"] = record.detections_text
    if record.mapping_text is not None:
        obj["mapping"] = record.mapping_text
    return obj


def write_corpus(records: Iterable[SampleRecord], path: str | Path,
                 fmt: Optional[str] = None) -> int:
    """Write records to a corpus file or directory; returns the count written."""
    root = Path(path)
    fmt = fmt or (DIRECTORY_TREE if root.is_dir() or root.suffix == "" else JSON_LINES)
    count = 0
    if fmt == JSON_LINES:
        root.parent.mkdir(parents=True, exist_ok=True)
        with open(root, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(_record_to_dict(record), ensure_ascii=False,
                                    sort_keys=True))
                fh.write("\n")
                count += 1
    elif fmt == DIRECTORY_TREE:
        root.mkdir(parents=True, exist_ok=True)
        for record in records:
            sample_dir = root / record.sample_id
            sample_dir.mkdir(parents=True, exist_ok=True)
            meta = {"version": RECORD_VERSION, "sample_id": record.sample_id,
                    "frame_count": record.frame_count}
            if record.image_dims is not None:
                meta["image_dims"] = [list(d) for d in record.image_dims]
            (sample_dir / "meta.json").write_text(
                json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
            (sample_dir / "cot.md").write_text(record.cot_text, encoding="utf-8")
            (sample_dir / "story.txt").write_text(record.story_text, encoding="utf-8")
            if record.detections_text is not None:
                (sample_dir / "detections.txt").write_text(record.detections_text,
                                                           encoding="utf-8")
            if record.mapping_text is not None:
                (sample_dir / "mapping.txt").write_text(record.mapping_text,
                                                        encoding="utf-8")
            count += 1
    else:
        raise CorpusFormatError(f"unknown corpus format: {fmt!r}")
    return count


@dataclass(frozen=True)
class ParsedSample:
    """A record parsed into its typed sample, with both parsers' diagnostics."""

    sample: StorySample
    think_wrapped: bool
    cot_diagnostics: tuple[ParseDiagnostic, ...]
    story_diagnostics: tuple[ParseDiagnostic, ...]


def parse_record(record: SampleRecord, mode: ParseMode = ParseMode.LENIENT
                 ) -> ParsedSample | SampleFailure:
    """Parse one record's texts into a StorySample.

    Returns a SampleFailure when either text does not parse in the requested
    mode; diagnostics are attached either way.
    """
    doc, cot_diags = parse_cot(record.cot_text, mode)
    story, story_diags = parse_story(record.story_text, mode)
    diags = tuple(cot_diags) + tuple(story_diags)
    if doc is None or story is None:
        side = "scene analysis" if doc is None else "story"
        return SampleFailure(record.sample_id, f"{side} failed to parse", diags)
    sample = StorySample(
        sample_id=record.sample_id,
        frame_count=record.frame_count,
        analyses=doc.analyses,
        narrative=doc.narrative,
        story=story,
        image_dims=record.image_dims,
    )
    return ParsedSample(sample, doc.think_wrapped, tuple(cot_diags), tuple(story_diags))


def sample_to_record(sample: StorySample, think_wrapped: bool = True,
                     detections_text: Optional[str] = None,
                     mapping_text: Optional[str] = None) -> SampleRecord:
    """Serialize a sample back into a record using the canonical renderers."""
    doc = CotDocument(sample.analyses, sample.narrative, think_wrapped)
    return SampleRecord(
        sample_id=sample.sample_id,
        cot_text=render_cot(doc),
        story_text=render_story(sample.story),
        frame_count=sample.frame_count,
        image_dims=sample.image_dims,
        detections_text=detections_text,
        mapping_text=mapping_text,
    )


# -- external (hub-published) corpus adapter ---------------------------------

DEFAULT_FIELD_CANDIDATES = {
    "sample_id": ("sample_id", "story_id", "id", "name"),
    "cot": ("cot", "chain_of_thought", "analysis", "reasoning"),
    "story": ("story", "grounded_story", "text"),
    "frame_count": ("frame_count", "num_frames", "images", "n_images"),
}


def adapt_external_record(obj: dict, field_map: Optional[dict[str, str]] = None,
                          ) -> SampleRecord:
    """Convert one record of an externally published corpus to a SampleRecord.

    field_map pins the source key per target field; unpinned fields fall back
    to common column names. frame_count is derived from the highest image tag
    in the story when the source has no usable column.
    """
    field_map = field_map or {}

    def pick(target: str):
        key = field_map.get(target)
        if key is not None:
            return obj.get(key)
        for candidate in DEFAULT_FIELD_CANDIDATES[target]:
            if candidate in obj:
                return obj[candidate]
        return None

    cot_text = pick("cot")
    story_text = pick("story")
    if not isinstance(cot_text, str) or not isinstance(story_text, str):
        raise CorpusFormatError("external record lacks usable cot/story text fields")
    sample_id = pick("sample_id")
    frame_count = pick("frame_count")
    if not isinstance(frame_count, int) or frame_count < 1:
        frame_count = _max_image_index(story_text, cot_text)
    return SampleRecord(
        sample_id=str(sample_id) if sample_id is not None else "unnamed",
        cot_text=cot_text,
        story_text=story_text,
        frame_count=frame_count,
    )


def _max_image_index(story_text: str, cot_text: str) -> int:
    import re

    indices = [int(m) for m in re.findall(r"<gdi\s+image(\d+)\s*>", story_text)]
    indices += [int(m) for m in re.findall(r"^##\s+Image\s+(\d+)\s*$", cot_text,
                                           flags=re.MULTILINE | re.IGNORECASE)]
    return max(indices, default=1)


def parse_corpus(path: str | Path, mode: ParseMode = ParseMode.LENIENT,
                 fmt: Optional[str] = None,
                 diagnostics: Optional[list[CorpusDiagnostic]] = None
                 ) -> Iterator[ParsedSample | SampleFailure]:
    """Stream a corpus straight into parsed samples (or failures)."""
    for record in read_corpus(path, fmt, diagnostics):
        yield parse_record(record, mode)
