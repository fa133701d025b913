"""Static, self-contained HTML rendering of one sample.

Pure text emission: same input, byte-identical output. Grounding spans get
stable CSS classes per tag kind (``gdo`` / ``gda`` / ``gdl``) plus a
``kind-<family>`` modifier for the first id's family, so downstream styling
can hook either level.
"""

from __future__ import annotations

import html

from .model import Ref, StorySample, TextRun

_CSS = """\
body { font-family: Georgia, serif; margin: 2rem auto; max-width: 60rem; color: #222; }
h1, h2, h3 { font-family: Helvetica, Arial, sans-serif; }
table { border-collapse: collapse; margin: 0.75rem 0 1.25rem; width: 100%; }
th, td { border: 1px solid #ccc; padding: 0.3rem 0.5rem; text-align: left;
         font-size: 0.85rem; }
th { background: #f2f2f2; font-family: Helvetica, Arial, sans-serif; }
.story p { line-height: 1.7; }
.ref { border-radius: 3px; padding: 0 2px; }
.ref.gdo.kind-char { background: #cfe3ff; }
.ref.gdo.kind-obj { background: #d9f2d0; }
.ref.gda { background: #c9f0ec; }
.ref.gdl { background: #ffd9ec; }
.entity-id { color: #555; font-size: 0.75em; vertical-align: super; }
"""


def _span(ref: Ref) -> str:
    ids = " ".join(str(i) for i in ref.ids)
    classes = f"ref {ref.tag.value} kind-{ref.ids[0].kind.value}"
    return (f'<span class="{classes}" title="{html.escape(ids)}">'
            f"{html.escape(ref.inner)}"
            f'<span class="entity-id">{html.escape(ids)}</span></span>')


def _table(headers: list[str], rows: list[list[str]]) -> str:
    head = "".join(f"<th>{html.escape(h)}</th>" for h in headers)
    body = "".join(
        "<tr>" + "".join(f"<td>{html.escape(c)}</td>" for c in row) + "</tr>"
        for row in rows)
    return f"<table><thead><tr>{head}</tr></thead><tbody>{body}</tbody></table>"


def render_report(sample: StorySample, title: str | None = None) -> str:
    """Render the sample as one standalone HTML document."""
    title = title or f"Sample {sample.sample_id}"
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8">',
        f"<title>{html.escape(title)}</title>",
        f"<style>{_CSS}</style>",
        "</head><body>",
        f"<h1>{html.escape(title)}</h1>",
    ]

    for analysis in sample.analyses:
        parts.append(f"<h2>Image {analysis.image_index}</h2>")
        if analysis.characters:
            parts.append("<h3>Characters</h3>")
            parts.append(_table(
                ["ID", "Name", "Description", "Emotions", "Actions", "Narrative Function"],
                [[str(r.id), r.name, r.description, r.emotions, r.actions,
                  r.narrative_function] for r in analysis.characters]))
        if analysis.objects:
            parts.append("<h3>Objects</h3>")
            parts.append(_table(
                ["ID", "Description", "Function", "Interaction", "Narrative Function"],
                [[str(r.id), r.description, r.function, r.interaction,
                  r.narrative_function] for r in analysis.objects]))
        if analysis.settings:
            parts.append("<h3>Setting</h3>")
            parts.append(_table(
                ["Element", "Description", "Mood", "Time", "Narrative Function"],
                [[r.element.value, r.description, r.mood, r.time,
                  r.narrative_function] for r in analysis.settings]))

    if sample.narrative:
        parts.append("<h2>Narrative Structure</h2>")
        parts.append(_table(
            ["Phase", "Description", "Key Events", "Images"],
            [[row.phase.value, row.description, row.key_events,
              ", ".join(str(i) for i in row.images)] for row in sample.narrative]))

    parts.append('<h2>Story</h2><div class="story">')
    for segment in sample.story.segments:
        chunks = [f"<h3>Image {segment.image_index}</h3>", "<p>"]
        for node in segment.nodes:
            if isinstance(node, TextRun):
                chunks.append(html.escape(node.text))
            else:
                chunks.append(_span(node))
        chunks.append("</p>")
        parts.append("".join(chunks))
    parts.append("</div></body></html>")
    return "\n".join(parts) + "\n"
