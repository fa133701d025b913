"""Parser and canonical renderer for the scene-analysis markdown.

The format is a sequence of ``## Image N`` sections, each holding optional
``### Characters`` / ``### Objects`` / ``### Setting`` pipe tables, followed by
one ``## Narrative Structure`` table; the whole document may be wrapped in
``<think>`` ... ``</think>``.

Parsing preserves raw cell text (trimmed at the pipes only); whitespace inside
cells is collapsed during canonical rendering, so render output is a stable
byte representation and re-parsing it is the identity on typed content.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .diagnostics import DiagnosticSink, ParseDiagnostic, ParseMode
from .model import (
    BoundingBox,
    CharacterRow,
    CotEntityIndex,
    DuplicateEntityError,
    EntityId,
    EntityKind,
    ImageAnalysis,
    MalformedIdError,
    NarrativePhaseRow,
    ObjectRow,
    SettingRow,
    parse_bbox,
    parse_entity_id,
    parse_narrative_phase,
    parse_setting_element,
)


@dataclass(frozen=True)
class CotDocument:
    """A parsed scene analysis: per-image tables plus the narrative table."""

    analyses: tuple[ImageAnalysis, ...]
    narrative: tuple[NarrativePhaseRow, ...]
    think_wrapped: bool = False

    def __post_init__(self) -> None:
        if not self.analyses:
            raise ValueError("document requires at least one image analysis")
        if not self.narrative:
            raise ValueError("document requires a non-empty narrative table")


_H2_RE = re.compile(r"^##\s+(.*?)\s*$")
_H3_RE = re.compile(r"^###\s+(.*?)\s*$")
_IMAGE_HEADER_RE = re.compile(r"^image\s+(\d+)$", re.IGNORECASE)
_SEPARATOR_CELL_RE = re.compile(r"^:?-+:?$")
_IMAGE_TOKEN_RE = re.compile(r"^(?:images?\s*)?(\d+)$", re.IGNORECASE)
_PIPE_SPLIT_RE = re.compile(r"(?<!\\)\|")

CHARACTER_COLUMNS = ("Character ID", "Name", "Description", "Emotions", "Actions",
                     "Narrative Function", "Bounding Box")
OBJECT_COLUMNS = ("Object ID", "Description", "Function", "Interaction",
                  "Narrative Function", "Bounding Box")
SETTING_COLUMNS = ("Setting Element", "Description", "Mood", "Time", "Narrative Function")
NARRATIVE_COLUMNS = ("Narrative Phase", "Description", "Key Events", "Images")

_HEADER_ALIASES = {
    "Character ID": {"id"},
    "Object ID": {"id"},
    "Narrative Function": {"function"},
    "Bounding Box": {"bbox"},
    "Setting Element": {"element"},
    "Narrative Phase": {"phase"},
}


def canonical_cell(text: str) -> str:
    """Collapse whitespace runs to single spaces and trim; used when rendering."""
    return " ".join(text.split())


def _split_cells(line: str) -> list[str]:
    body = line.strip()
    if body.startswith("|"):
        body = body[1:]
    if body.endswith("|") and not body.endswith(r"\|"):
        body = body[:-1]
    return [c.strip().replace(r"\|", "|") for c in _PIPE_SPLIT_RE.split(body)]


def _is_separator(cells: list[str]) -> bool:
    return bool(cells) and all(_SEPARATOR_CELL_RE.match(c) for c in cells)


@dataclass
class _Block:
    kind: str  # "h2" | "h3" | "table" | "stray"
    line: int
    text: str = ""
    rows: list[tuple[int, list[str]]] = None  # type: ignore[assignment]


def _lex_blocks(lines: list[str], start: int, end: int) -> list[_Block]:
    blocks: list[_Block] = []
    i = start
    while i < end:
        raw = lines[i]
        stripped = raw.strip()
        lineno = i + 1
        if not stripped:
            i += 1
            continue
        if stripped.startswith("###"):
            m = _H3_RE.match(stripped)
            blocks.append(_Block("h3", lineno, m.group(1) if m else stripped.lstrip("#").strip()))
            i += 1
        elif stripped.startswith("##"):
            m = _H2_RE.match(stripped)
            blocks.append(_Block("h2", lineno, m.group(1) if m else stripped.lstrip("#").strip()))
            i += 1
        elif stripped.startswith("|"):
            rows: list[tuple[int, list[str]]] = []
            while i < end and lines[i].strip().startswith("|"):
                rows.append((i + 1, _split_cells(lines[i])))
                i += 1
            block = _Block("table", rows[0][0])
            block.rows = rows
            blocks.append(block)
        else:
            blocks.append(_Block("stray", lineno, raw))
            i += 1
    return blocks


def _strip_think(lines: list[str], sink: DiagnosticSink) -> tuple[bool, int, int]:
    """Detect a whole-document think wrapper; returns (wrapped, start, end) line bounds."""
    first = next((i for i, l in enumerate(lines) if l.strip()), None)
    last = next((i for i in range(len(lines) - 1, -1, -1) if lines[i].strip()), None)
    if first is None or last is None:
        return False, 0, len(lines)
    opens = lines[first].strip() == "<think>"
    closes = lines[last].strip() == "</think>"
    if opens and closes and first < last:
        return True, first + 1, last
    if opens != closes:
        sink.error(first + 1 if opens else last + 1, 1, "UnbalancedThink",
                   "found only one side of the <think> wrapper")
        if opens:
            return False, first + 1, len(lines)
        return False, 0, last
    return False, 0, len(lines)


class _TableReader:
    """Splits a table block into a checked header and data rows for one schema."""

    def __init__(self, sink: DiagnosticSink, schema: tuple[str, ...], bbox_optional: bool):
        self.sink = sink
        self.schema = schema
        self.bbox_optional = bbox_optional

    def read(self, block: _Block) -> tuple[list[tuple[int, list[str]]], bool]:
        """Returns (data rows, has_bbox_column); rows already count-checked."""
        rows = block.rows
        header_line, header = rows[0]
        data = rows[1:]
        if data and _is_separator(data[0][1]):
            sep_line, sep_cells = data[0]
            if len(sep_cells) != len(header):
                self.sink.error(sep_line, 1, "MalformedTable",
                                f"separator row has {len(sep_cells)} cells, "
                                f"header has {len(header)}")
            data = data[1:]
        want = len(self.schema)
        allowed = {want, want - 1} if self.bbox_optional else {want}
        n = len(header)
        if n > want:
            self.sink.error(header_line, 1, "MalformedTable",
                            f"expected {want} columns, found {n}; extra columns ignored")
            header = header[:want]
            data = [(ln, cells[:want] if len(cells) > want else cells) for ln, cells in data]
            n = want
        elif n not in allowed:
            self.sink.error(header_line, 1, "MalformedTable",
                            f"expected {sorted(allowed)} columns, found {n}")
            return [], False
        self._check_header_names(header_line, header)
        if not data:
            self.sink.error(header_line, 1, "MalformedTable", "table has no data rows")
            return [], False
        checked = []
        for ln, cells in data:
            if len(cells) != n:
                self.sink.error(ln, 1, "MalformedTable",
                                f"row has {len(cells)} cells, header has {n}")
                continue
            checked.append((ln, cells))
        has_bbox = self.bbox_optional and n == len(self.schema)
        return checked, has_bbox

    def _check_header_names(self, line: int, header: list[str]) -> None:
        for got, want in zip(header, self.schema):
            norm = " ".join(got.split()).lower()
            if norm == want.lower() or norm in _HEADER_ALIASES.get(want, ()):
                continue
            self.sink.warning(line, 1, "HeaderMismatch",
                              f"column header {got!r} does not match schema name {want!r}")


@dataclass
class _ImageSection:
    index: int
    line: int
    characters: list[CharacterRow]
    objects: list[ObjectRow]
    settings: list[SettingRow]
    seen_tables: set[str]


def parse_cot(text: str, mode: ParseMode = ParseMode.STRICT
              ) -> tuple[CotDocument | None, list[ParseDiagnostic]]:
    """Parse scene-analysis markdown into a typed document.

    Returns (document, diagnostics); the document is None when any
    error-severity diagnostic was produced. In lenient mode recoverable errors
    become warnings and the offending rows or sections are dropped.
    """
    sink = DiagnosticSink(mode)
    lines = text.split("\n")
    think_wrapped, start, end = _strip_think(lines, sink)
    blocks = _lex_blocks(lines, start, end)

    images: dict[int, _ImageSection] = {}
    image_order: list[int] = []
    narrative_rows: list[NarrativePhaseRow] = []
    narrative_seen = False
    # target: ("image", idx) | ("narrative",) | ("skip",) | None
    target: tuple | None = None
    pending_h3: tuple[str, int] | None = None

    def flush_pending() -> None:
        nonlocal pending_h3
        if pending_h3 is not None:
            name, ln = pending_h3
            sink.error(ln, 1, "MalformedTable", f"{name} section has no table")
            pending_h3 = None

    for block in blocks:
        if block.kind == "h2":
            flush_pending()
            m = _IMAGE_HEADER_RE.match(block.text)
            if m:
                idx = int(m.group(1))
                if idx < 1:
                    sink.error(block.line, 1, "MissingImageHeader",
                               f"image index must be >= 1, got {idx}")
                    target = ("skip",)
                elif idx in images:
                    sink.error(block.line, 1, "DuplicateImageSection",
                               f"second section for image {idx}; keeping the first")
                    target = ("skip",)
                else:
                    if narrative_seen:
                        sink.warning(block.line, 1, "ImageOrder",
                                     f"image {idx} section appears after the narrative table")
                    images[idx] = _ImageSection(idx, block.line, [], [], [], set())
                    image_order.append(idx)
                    target = ("image", idx)
            elif " ".join(block.text.split()).lower() == "narrative structure":
                if narrative_seen:
                    sink.error(block.line, 1, "DuplicateSection",
                               "second narrative structure section")
                narrative_seen = True
                target = ("narrative",)
            else:
                sink.error(block.line, 1, "UnknownSection",
                           f"unrecognized section header: {block.text!r}")
                target = ("skip",)
        elif block.kind == "h3":
            flush_pending()
            name = " ".join(block.text.split()).lower()
            if name not in ("characters", "objects", "setting"):
                sink.error(block.line, 1, "UnknownSection",
                           f"unrecognized table header: {block.text!r}")
                continue
            if target is None or target[0] != "image":
                if target is not None and target[0] == "skip":
                    continue
                sink.error(block.line, 1, "MissingImageHeader",
                           f"{block.text} table outside any image section")
                continue
            section = images[target[1]]
            if name in section.seen_tables:
                sink.error(block.line, 1, "DuplicateSection",
                           f"second {block.text} table for image {section.index}")
                continue
            section.seen_tables.add(name)
            pending_h3 = (name, block.line)
        elif block.kind == "table":
            if pending_h3 is not None:
                name, _ = pending_h3
                pending_h3 = None
                section = images[target[1]]  # type: ignore[index]
                _parse_image_table(sink, name, block, section)
            elif target is not None and target[0] == "narrative":
                narrative_rows.extend(_parse_narrative_table(sink, block))
            elif target is not None and target[0] == "skip":
                continue
            else:
                sink.error(block.line, 1, "MissingImageHeader",
                           "table without a preceding section header")
        else:  # stray
            sink.error(block.line, 1, "StrayText",
                       f"unexpected content outside any table: {block.text.strip()[:60]!r}")

    flush_pending()

    if not images:
        sink.hard_error(len(lines), 1, "MissingImageHeader", "no image sections found")
    if not narrative_rows:
        sink.hard_error(len(lines), 1, "MissingNarrative",
                        "no narrative structure table found")

    analyses = []
    for idx in sorted(images):
        s = images[idx]
        if not s.seen_tables.intersection({"setting"}):
            sink.warning(s.line, 1, "MissingSetting", f"image {idx} has no setting table")
        analysis = ImageAnalysis(idx, tuple(s.characters), tuple(s.objects), tuple(s.settings))
        for dup in analysis.duplicate_ids():
            sink.warning(s.line, 1, "DuplicateEntityInImage",
                         f"entity {dup} appears twice in image {idx}")
        analyses.append(analysis)
    if image_order != sorted(image_order):
        sink.warning(images[image_order[0]].line, 1, "ImageOrder",
                     "image sections are not in ascending order")

    if sink.failed:
        return None, sink.items
    return CotDocument(tuple(analyses), tuple(narrative_rows), think_wrapped), sink.items


def _parse_image_table(sink: DiagnosticSink, name: str, block: _Block,
                       section: _ImageSection) -> None:
    if name == "characters":
        reader = _TableReader(sink, CHARACTER_COLUMNS, bbox_optional=True)
        rows, has_bbox = reader.read(block)
        for ln, cells in rows:
            eid = _parse_id_cell(sink, ln, cells[0], EntityKind.CHARACTER, "character")
            if eid is None:
                continue
            bbox = _parse_bbox_cell(sink, ln, cells[6]) if has_bbox else None
            if bbox is _BAD:
                continue
            section.characters.append(
                CharacterRow(eid, cells[1], cells[2], cells[3], cells[4], cells[5], bbox))
    elif name == "objects":
        reader = _TableReader(sink, OBJECT_COLUMNS, bbox_optional=True)
        rows, has_bbox = reader.read(block)
        for ln, cells in rows:
            eid = _parse_id_cell(sink, ln, cells[0], None, "object")
            if eid is None:
                continue
            bbox = _parse_bbox_cell(sink, ln, cells[5]) if has_bbox else None
            if bbox is _BAD:
                continue
            section.objects.append(
                ObjectRow(eid, cells[1], cells[2], cells[3], cells[4], bbox))
    else:  # setting
        reader = _TableReader(sink, SETTING_COLUMNS, bbox_optional=False)
        rows, _ = reader.read(block)
        for ln, cells in rows:
            element = parse_setting_element(cells[0])
            if element is None:
                sink.error(ln, 1, "UnknownSettingElement",
                           f"setting element {cells[0]!r} is outside the taxonomy")
                continue
            section.settings.append(SettingRow(element, cells[1], cells[2], cells[3], cells[4]))


_BAD = object()


def _parse_id_cell(sink: DiagnosticSink, line: int, cell: str,
                   required_kind: EntityKind | None, table: str) -> EntityId | None:
    try:
        eid = parse_entity_id(cell.strip())
    except MalformedIdError as exc:
        sink.error(line, 1, "MalformedId", str(exc))
        return None
    if required_kind is not None and eid.kind is not required_kind:
        sink.error(line, 1, "WrongIdKind", f"{eid} cannot appear in the {table} table")
        return None
    if required_kind is None and eid.kind is EntityKind.CHARACTER:
        sink.error(line, 1, "WrongIdKind", f"{eid} cannot appear in the {table} table")
        return None
    return eid


def _parse_bbox_cell(sink: DiagnosticSink, line: int, cell: str):
    if not cell.strip():
        return None
    try:
        return parse_bbox(cell)
    except ValueError as exc:
        sink.error(line, 1, "MalformedBBox", str(exc))
        return _BAD


def _parse_narrative_table(sink: DiagnosticSink, block: _Block) -> list[NarrativePhaseRow]:
    reader = _TableReader(sink, NARRATIVE_COLUMNS, bbox_optional=False)
    rows, _ = reader.read(block)
    out = []
    for ln, cells in rows:
        phase = parse_narrative_phase(cells[0])
        if phase is None:
            sink.error(ln, 1, "UnknownNarrativePhase",
                       f"narrative phase {cells[0]!r} is outside the taxonomy")
            continue
        images = _parse_image_list(cells[3])
        if images is None:
            sink.error(ln, 1, "MalformedImageList",
                       f"cannot read image list from {cells[3]!r}")
            continue
        out.append(NarrativePhaseRow(phase, cells[1], cells[2], images))
    return out


def _parse_image_list(cell: str) -> tuple[int, ...] | None:
    indices = []
    for token in cell.split(","):
        token = token.strip()
        if not token:
            continue
        m = _IMAGE_TOKEN_RE.match(token)
        if m is None:
            return None
        indices.append(int(m.group(1)))
    if not indices or min(indices) < 1:
        return None
    return tuple(sorted(set(indices)))


def render_cot(doc: CotDocument) -> str:
    """Render a document to its canonical markdown byte representation.

    Output is deterministic: sections in ascending image order, schema column
    order, single-space-padded cells, one blank line between blocks, LF line
    endings and exactly one trailing newline. Rendering collapses whitespace
    runs inside cells, so a second parse/render pass is byte-identical.
    """
    blocks: list[str] = []
    for analysis in sorted(doc.analyses, key=lambda a: a.image_index):
        blocks.append(f"## Image {analysis.image_index}")
        if analysis.characters:
            has_bbox = any(r.bbox is not None for r in analysis.characters)
            headers = CHARACTER_COLUMNS if has_bbox else CHARACTER_COLUMNS[:-1]
            rows = [[str(r.id), r.name, r.description, r.emotions, r.actions,
                     r.narrative_function] + ([_bbox_cell(r.bbox)] if has_bbox else [])
                    for r in analysis.characters]
            blocks.append("### Characters")
            blocks.append(_render_table(headers, rows))
        if analysis.objects:
            has_bbox = any(r.bbox is not None for r in analysis.objects)
            headers = OBJECT_COLUMNS if has_bbox else OBJECT_COLUMNS[:-1]
            rows = [[str(r.id), r.description, r.function, r.interaction,
                     r.narrative_function] + ([_bbox_cell(r.bbox)] if has_bbox else [])
                    for r in analysis.objects]
            blocks.append("### Objects")
            blocks.append(_render_table(headers, rows))
        if analysis.settings:
            rows = [[r.element.value, r.description, r.mood, r.time, r.narrative_function]
                    for r in analysis.settings]
            blocks.append("### Setting")
            blocks.append(_render_table(SETTING_COLUMNS, rows))
    blocks.append("## Narrative Structure")
    rows = [[r.phase.value, r.description, r.key_events,
             ", ".join(f"Image {i}" for i in r.images)] for r in doc.narrative]
    blocks.append(_render_table(NARRATIVE_COLUMNS, rows))

    body = "\n\n".join(blocks) + "\n"
    if doc.think_wrapped:
        return "<think>\n" + body + "</think>\n"
    return body


def _bbox_cell(bbox: BoundingBox | None) -> str:
    return "" if bbox is None else str(bbox)


def _render_table(headers: tuple[str, ...], rows: list[list[str]]) -> str:
    def fmt(cells) -> str:
        return "| " + " | ".join(canonical_cell(c).replace("|", r"\|") for c in cells) + " |"

    lines = [fmt(headers), "| " + " | ".join("---" for _ in headers) + " |"]
    lines.extend(fmt(row) for row in rows)
    return "\n".join(lines)


def cot_entity_index(doc: CotDocument) -> CotEntityIndex:
    """Map every character/object row to its (image, bbox) occurrences.

    Raises DuplicateEntityError when one id appears twice within a single
    image; occurrences are listed in ascending image order.
    """
    index: CotEntityIndex = {}
    for analysis in sorted(doc.analyses, key=lambda a: a.image_index):
        seen: set[EntityId] = set()
        for eid, bbox in analysis.entity_rows():
            if eid in seen:
                raise DuplicateEntityError(
                    f"entity {eid} appears twice in image {analysis.image_index}")
            seen.add(eid)
            index.setdefault(eid, []).append((analysis.image_index, bbox))
    return index
