"""Parser and canonical renderer for the grounded-story tag language.

The language has exactly four tags: ``<gdi imageN>`` segments at the top level
and ``<gdo>``/``<gda>``/``<gdl>`` grounding spans inside them, carrying one or
more space-separated entity ids. Grounding spans never nest. Anything else
that looks like markup is an error; a bare ``<`` that cannot start a tag is
ordinary prose.

The full grammar is written out in docs/formats.md.
"""

from __future__ import annotations

import re
from bisect import bisect_right
from typing import NamedTuple

from .diagnostics import DiagnosticSink, ParseDiagnostic, ParseMode
from .model import (
    EntityId,
    EntityKind,
    GroundedStory,
    MalformedIdError,
    Ref,
    RefTag,
    StorySegment,
    TextRun,
    parse_entity_id,
)

_TAG_RE = re.compile(r"<(/?)([a-zA-Z][a-zA-Z0-9]*)([^<>]*)>")
_TAG_START_RE = re.compile(r"</?[a-zA-Z]")
_IMAGE_ATTR_RE = re.compile(r"^image(\d+)$", re.IGNORECASE)

_TAG_NAMES = {"gdi", "gdo", "gda", "gdl"}
_REF_TAGS = {"gdo": RefTag.GDO, "gda": RefTag.GDA, "gdl": RefTag.GDL}

_ALLOWED_KINDS = {
    RefTag.GDO: (EntityKind.CHARACTER, EntityKind.OBJECT),
    RefTag.GDA: (EntityKind.CHARACTER,),
    RefTag.GDL: (EntityKind.LANDMARK, EntityKind.BACKGROUND),
}


class StoryReference(NamedTuple):
    """One grounding span in document order."""

    image_index: int
    tag: RefTag
    ids: tuple[EntityId, ...]
    inner: str


class _Locator:
    def __init__(self, text: str) -> None:
        self.starts = [0]
        for i, ch in enumerate(text):
            if ch == "\n":
                self.starts.append(i + 1)

    def at(self, pos: int) -> tuple[int, int]:
        line = bisect_right(self.starts, pos)
        return line, pos - self.starts[line - 1] + 1


class _Parser:
    def __init__(self, text: str, mode: ParseMode) -> None:
        self.text = text
        self.sink = DiagnosticSink(mode)
        self.lenient = mode is ParseMode.LENIENT
        self.loc = _Locator(text)
        self.segments: list[StorySegment] = []
        self.outside_before: list[str] = []
        self.outside_after: list[str] = []
        # open segment state
        self.seg_index: int | None = None
        self.seg_discard = False
        self.nodes: list[object] = []
        # open ref state
        self.ref: tuple[RefTag, tuple[EntityId, ...], int] | None = None  # (tag, ids, open pos)
        self.ref_keep = True
        self.ref_text: list[str] = []
        self.nested: list[str] = []  # names of flattened tags opened inside the ref
        self.seen_indices: set[int] = set()

    def error(self, pos: int, code: str, message: str) -> None:
        line, col = self.loc.at(pos)
        self.sink.error(line, col, code, message)

    def hard_error(self, pos: int, code: str, message: str) -> None:
        line, col = self.loc.at(pos)
        self.sink.hard_error(line, col, code, message)

    def warning(self, pos: int, code: str, message: str) -> None:
        line, col = self.loc.at(pos)
        self.sink.warning(line, col, code, message)

    # -- text routing ------------------------------------------------------

    def emit_text(self, text: str, pos: int) -> None:
        if not text:
            return
        if self.ref is not None:
            self.ref_text.append(text)
        elif self.seg_index is not None:
            self.nodes.append(TextRun(text))
        else:
            if text.strip():
                self.warning(pos, "TextOutsideImage",
                             "story text outside any image segment")
                bucket = self.outside_after if self.segments else self.outside_before
                bucket.append(text.strip())

    # -- segment / ref lifecycle --------------------------------------------

    def open_segment(self, index: int, discard: bool) -> None:
        self.seg_index = index
        self.seg_discard = discard
        self.nodes = []

    def close_segment(self) -> None:
        assert self.seg_index is not None
        if self.seg_discard:
            text = _plain_nodes(self.nodes).strip()
            if text:
                bucket = self.outside_after if self.segments else self.outside_before
                bucket.append(text)
        else:
            nodes = _merge_runs(self.nodes)
            self.segments.append(StorySegment(self.seg_index, tuple(nodes)))
            self.seen_indices.add(self.seg_index)
        self.seg_index = None
        self.nodes = []

    def close_ref(self) -> None:
        assert self.ref is not None
        tag, ids, _ = self.ref
        inner = "".join(self.ref_text)
        keep = self.ref_keep
        self.ref = None
        self.ref_text = []
        self.ref_keep = True
        self.nested = []
        if keep:
            self.nodes.append(Ref(tag, ids, inner))
        else:
            self._emit_flattened(inner)

    def flatten_ref(self) -> None:
        """Recovery: demote the open ref to plain text."""
        assert self.ref is not None
        inner = "".join(self.ref_text)
        self.ref = None
        self.ref_text = []
        self.ref_keep = True
        self.nested = []
        self._emit_flattened(inner)

    def _emit_flattened(self, inner: str) -> None:
        if not inner:
            return
        if self.seg_index is not None:
            self.nodes.append(TextRun(inner))
        elif inner.strip():
            bucket = self.outside_after if self.segments else self.outside_before
            bucket.append(inner.strip())


def parse_story(text: str, mode: ParseMode = ParseMode.STRICT
                ) -> tuple[GroundedStory | None, list[ParseDiagnostic]]:
    """Parse grounded-story text into a typed story.

    Returns (story, diagnostics); the story is None when any error-severity
    diagnostic was produced. Unknown tag names are errors in both modes; most
    other problems degrade to warnings in lenient mode, with the offending
    markup flattened into plain text so no prose is lost.
    """
    p = _Parser(text, mode)
    pos = 0
    n = len(text)
    while pos < n:
        lt = text.find("<", pos)
        if lt == -1:
            p.emit_text(text[pos:], pos)
            break
        if lt > pos:
            p.emit_text(text[pos:lt], pos)
        if not _TAG_START_RE.match(text, lt):
            p.emit_text("<", lt)  # a lone '<' in prose
            pos = lt + 1
            continue
        m = _TAG_RE.match(text, lt)
        if m is None:
            p.error(lt, "UnclosedTag", "tag delimiter is never closed")
            if p.lenient:
                p.emit_text("<", lt)
            pos = lt + 1
            continue
        _handle_tag(p, m)
        pos = m.end()

    eof = max(n - 1, 0)
    if p.ref is not None:
        p.error(p.ref[2], "UnclosedTag", f"<{p.ref[0].value}> span is never closed")
        p.flatten_ref()
    if p.seg_index is not None:
        p.error(eof, "UnclosedTag", f"<gdi image{p.seg_index}> is never closed")
        p.close_segment()

    if p.sink.failed:
        return None, p.sink.items
    story = GroundedStory(tuple(p.segments),
                          "\n".join(p.outside_before), "\n".join(p.outside_after))
    return story, p.sink.items


def _handle_tag(p: _Parser, m: re.Match) -> None:
    closing, name, attrs = m.group(1) == "/", m.group(2), m.group(3)
    pos = m.start()
    if name not in _TAG_NAMES:
        p.hard_error(pos, "UnknownTag", f"unknown tag <{'/' if closing else ''}{name}>; "
                     "the vocabulary is gdi, gdo, gda, gdl")
        return

    if closing:
        if attrs.strip():
            p.error(pos, "MismatchedClose", f"closing tag </{name}> must not carry attributes")
        if name == "gdi":
            if p.ref is not None:
                p.error(p.ref[2], "UnclosedTag",
                        f"<{p.ref[0].value}> span is still open at </gdi>")
                p.flatten_ref()
            if p.seg_index is None:
                p.error(pos, "MismatchedClose", "</gdi> without an open image segment")
            else:
                p.close_segment()
        else:
            if p.ref is None:
                p.error(pos, "MismatchedClose", f"</{name}> without an open span")
            elif p.nested and p.nested[-1] == name:
                p.nested.pop()  # closes a tag that was flattened at its open
            elif p.ref[0].value != name:
                p.error(pos, "MismatchedClose",
                        f"</{name}> closes a <{p.ref[0].value}> span")
                p.close_ref()  # recover by closing the span that is actually open
            else:
                p.close_ref()
        return

    if name == "gdi":
        _open_image(p, pos, attrs)
        return
    _open_ref(p, pos, _REF_TAGS[name], attrs)


def _open_image(p: _Parser, pos: int, attrs: str) -> None:
    if p.ref is not None:
        p.error(p.ref[2], "UnclosedTag", f"<{p.ref[0].value}> span is still open at <gdi>")
        p.flatten_ref()
    if p.seg_index is not None:
        p.error(pos, "NestedImage", "image segment opened inside another segment")
        p.close_segment()
    if attrs != attrs.rstrip():
        p.error(pos, "LooseTagWhitespace", "whitespace before '>' in <gdi> tag")
    index = None
    attr = attrs.strip()
    am = _IMAGE_ATTR_RE.match(attr)
    if am is None or not attr:
        p.error(pos, "MalformedId", f"image tag needs one attribute of the form imageN, "
                f"got {attrs.strip()!r}")
    else:
        index = int(am.group(1))
        if index < 1:
            p.error(pos, "MalformedId", f"image index must be >= 1, got {index}")
            index = None
    discard = index is None
    if index is not None:
        if index in p.seen_indices:
            p.error(pos, "DuplicateImageSegment", f"second segment for image {index}")
            discard = True
        elif p.seen_indices and index < max(p.seen_indices):
            p.error(pos, "OutOfOrderImageSegment",
                    f"segment for image {index} appears after image {max(p.seen_indices)}")
            discard = True
    p.open_segment(index if index is not None else 1, discard)


def _open_ref(p: _Parser, pos: int, tag: RefTag, attrs: str) -> None:
    if p.ref is not None:
        p.error(pos, "NestedRef",
                f"<{tag.value}> opened inside a <{p.ref[0].value}> span")
        # recover by folding the nested tag's content into the outer span
        p.nested.append(tag.value)
        return
    in_segment = p.seg_index is not None
    if not in_segment:
        p.error(pos, "RefOutsideImage", f"<{tag.value}> span outside any image segment")

    keep = in_segment
    if attrs != attrs.rstrip():
        p.error(pos, "LooseTagWhitespace",
                f"whitespace before '>' in <{tag.value}> tag")
    tokens = attrs.split()
    if not tokens:
        p.error(pos, "EmptyIdList", f"<{tag.value}> tag carries no entity ids")
        keep = False
    ids: list[EntityId] = []
    for token in tokens:
        try:
            eid = parse_entity_id(token)
        except MalformedIdError:
            p.error(pos, "MalformedId", f"bad entity id {token!r} in <{tag.value}> tag")
            continue
        if eid in ids:
            p.error(pos, "DuplicateId", f"duplicate id {eid} in <{tag.value}> tag")
            continue
        ids.append(eid)
    if tokens and not ids:
        keep = False
    for eid in ids:
        if eid.kind not in _ALLOWED_KINDS[tag]:
            p.error(pos, "TagKindMismatch",
                    f"{eid} ({eid.kind.value}) is not allowed in a <{tag.value}> tag")

    if not in_segment:
        # lenient: the span is flattened and its text lands outside the story
        p.ref = (tag, tuple(ids), pos)
        p.ref_keep = False
        return
    p.ref = (tag, tuple(ids), pos)
    p.ref_keep = keep


def _merge_runs(nodes: list) -> list:
    merged: list = []
    for node in nodes:
        if isinstance(node, TextRun):
            if not node.text:
                continue
            if merged and isinstance(merged[-1], TextRun):
                merged[-1] = TextRun(merged[-1].text + node.text)
                continue
        merged.append(node)
    # trim whitespace that only separates the segment markup from its content
    if merged and isinstance(merged[0], TextRun):
        trimmed = merged[0].text.lstrip()
        if trimmed:
            merged[0] = TextRun(trimmed)
        else:
            merged.pop(0)
    if merged and isinstance(merged[-1], TextRun):
        trimmed = merged[-1].text.rstrip()
        if trimmed:
            merged[-1] = TextRun(trimmed)
        else:
            merged.pop()
    return merged


def _plain_nodes(nodes: list) -> str:
    parts = []
    for node in nodes:
        parts.append(node.text if isinstance(node, TextRun) else node.inner)
    return "".join(parts)


def _collapse(text: str) -> str:
    return " ".join(text.split())


def render_story(story: GroundedStory) -> str:
    """Render a story canonically: one segment per ``<gdi>`` block, blocks
    separated by a blank line, whitespace runs collapsed, exactly one trailing
    newline. Deterministic byte output; idempotent through a parse cycle."""
    parts: list[str] = []
    if story.preamble.strip():
        parts.append(_collapse(story.preamble))
    for segment in story.segments:
        content = "".join(_render_node(n) for n in segment.nodes).strip()
        parts.append(f"<gdi image{segment.image_index}>\n{content}\n</gdi>")
    if story.postamble.strip():
        parts.append(_collapse(story.postamble))
    if not parts:
        return "\n"
    return "\n\n".join(parts) + "\n"


def _render_node(node) -> str:
    if isinstance(node, TextRun):
        collapsed = re.sub(r"\s+", " ", node.text)
        return collapsed
    ids = " ".join(str(i) for i in node.ids)
    return f"<{node.tag.value} {ids}>{_collapse(node.inner)}</{node.tag.value}>"


def story_references(story: GroundedStory) -> list[StoryReference]:
    """All grounding spans in document order."""
    refs: list[StoryReference] = []
    for segment in story.segments:
        for node in segment.nodes:
            if isinstance(node, Ref):
                refs.append(StoryReference(segment.image_index, node.tag, node.ids, node.inner))
    return refs


def plain_text(story: GroundedStory) -> str:
    """The story prose with all tags stripped; whitespace collapsed, segments
    joined by single spaces."""
    parts: list[str] = []
    if story.preamble:
        parts.append(story.preamble)
    for segment in story.segments:
        parts.append(_plain_nodes(list(segment.nodes)))
    if story.postamble:
        parts.append(story.postamble)
    return _collapse(" ".join(p for p in parts if p))


def word_count(story: GroundedStory) -> int:
    """Whitespace-token count of the tag-stripped story text."""
    text = plain_text(story)
    return len(text.split()) if text else 0
