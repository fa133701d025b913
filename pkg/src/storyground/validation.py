"""Integrity rules over a full story sample.

Rule codes are stable strings for machine consumption:

  R1  every grounding-tag id has a matching character/object row
  R2  bounding boxes fit inside their image's known dimensions
  R3  structural diagnostics delegated from the scene-table parser
  R4  image-tag indices fall within 1..frame_count
  R5  tag kind and id kind are compatible (gdl <-> lm/bg, gdo/gda <-> char/obj)
  R6  all five narrative phases are present
  R7  no duplicate entity id inside one image's tables
  W1  pronoun/number agreement heuristic (warning only, never an error)
  W2  narrative rows referencing images outside 1..frame_count (warning only)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Optional, Sequence

from .diagnostics import ParseDiagnostic, Severity as ParseSeverity
from .model import EntityKind, NarrativePhase, RefTag, StorySample
from .story import story_references

ALL_RULES = ("R1", "R2", "R3", "R4", "R5", "R6", "R7")

_GDL_KINDS = (EntityKind.LANDMARK, EntityKind.BACKGROUND)
_GDO_KINDS = (EntityKind.CHARACTER, EntityKind.OBJECT)

_SINGULAR_PRONOUNS = {"he", "she", "i", "it", "him", "her", "his", "hers", "its", "me", "my"}
_PLURAL_PRONOUNS = {"they", "them", "their", "theirs", "we", "us", "our", "ours"}


class FindingSeverity(Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


@dataclass(frozen=True)
class Finding:
    rule: str
    severity: FindingSeverity
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    """All findings for one sample; passed means no error-severity finding."""

    sample_id: str
    findings: tuple[Finding, ...]
    passed: bool

    @staticmethod
    def build(sample_id: str, findings: Sequence[Finding]) -> "ValidationReport":
        passed = not any(f.severity is FindingSeverity.ERROR for f in findings)
        return ValidationReport(sample_id, tuple(findings), passed)


@dataclass(frozen=True)
class ValidationConfig:
    """Which rules run and at what severity.

    Severity overrides never raise W1 above warning; corpus-conformance checks
    (all five phases, minimum frame count) are the configurable pieces.
    """

    enabled_rules: frozenset[str] = frozenset(ALL_RULES)
    severity_overrides: tuple[tuple[str, FindingSeverity], ...] = ()
    pronoun_number_check: bool = True
    min_frame_count: Optional[int] = None

    def severity_for(self, rule: str) -> FindingSeverity:
        for name, severity in self.severity_overrides:
            if name == rule:
                return severity
        return FindingSeverity.ERROR

    def enabled(self, rule: str) -> bool:
        return rule in self.enabled_rules


def validate_sample(sample: StorySample, config: ValidationConfig | None = None,
                    parse_diagnostics: Sequence[ParseDiagnostic] = ()) -> ValidationReport:
    """Evaluate the rule set against one sample.

    parse_diagnostics are the scene-table parser's diagnostics for this sample
    and feed rule R3; findings are data, so this never raises on bad content.
    """
    cfg = config or ValidationConfig()
    findings: list[Finding] = []
    add = findings.append
    refs = story_references(sample.story)

    if cfg.enabled("R1"):
        known = {eid for analysis in sample.analyses for eid, _ in analysis.entity_rows()}
        missing: dict[str, int] = {}
        for ref in refs:
            for eid in ref.ids:
                if eid not in known:
                    missing[str(eid)] = missing.get(str(eid), 0) + 1
        for eid_text, count in sorted(missing.items()):
            add(Finding("R1", cfg.severity_for("R1"), "story",
                        f"{eid_text} is referenced {count} time(s) in the story "
                        "but has no scene-table row"))

    if cfg.enabled("R2"):
        checked = 0
        for analysis in sample.analyses:
            dims = sample.dims_for(analysis.image_index)
            if dims is None:
                continue
            width, height = dims
            for eid, bbox in analysis.entity_rows():
                if bbox is None:
                    continue
                checked += 1
                if not bbox.fits_within(width, height):
                    add(Finding("R2", cfg.severity_for("R2"),
                                f"image {analysis.image_index}",
                                f"{eid} box {bbox} exceeds image size {width}x{height}"))
        if checked == 0:
            add(Finding("R2", FindingSeverity.INFO, "sample",
                        "no bounding boxes with known image dimensions; R2 skipped"))

    if cfg.enabled("R3"):
        for diag in parse_diagnostics:
            severity = (cfg.severity_for("R3") if diag.severity is ParseSeverity.ERROR
                        else FindingSeverity.WARNING)
            add(Finding("R3", severity, f"line {diag.line}",
                        f"[{diag.code}] {diag.message}"))

    if cfg.enabled("R4"):
        for segment in sample.story.segments:
            if not (1 <= segment.image_index <= sample.frame_count):
                add(Finding("R4", cfg.severity_for("R4"),
                            f"image {segment.image_index}",
                            f"image tag index {segment.image_index} outside "
                            f"1..{sample.frame_count}"))

    if cfg.enabled("R5"):
        for ref in refs:
            allowed = _GDL_KINDS if ref.tag is RefTag.GDL else _GDO_KINDS
            for eid in ref.ids:
                if eid.kind not in allowed:
                    add(Finding("R5", cfg.severity_for("R5"),
                                f"image {ref.image_index}",
                                f"{eid} ({eid.kind.value}) inside a "
                                f"<{ref.tag.value}> tag"))

    if cfg.enabled("R6"):
        present = {row.phase for row in sample.narrative}
        for phase in NarrativePhase:
            if phase not in present:
                add(Finding("R6", cfg.severity_for("R6"), "narrative",
                            f"narrative phase {phase.value!r} is missing"))

    if cfg.enabled("R7"):
        for analysis in sample.analyses:
            for dup in analysis.duplicate_ids():
                add(Finding("R7", cfg.severity_for("R7"),
                            f"image {analysis.image_index}",
                            f"entity {dup} appears in two rows of image "
                            f"{analysis.image_index}"))

    if cfg.pronoun_number_check:
        findings.extend(_pronoun_number_findings(refs))

    for row in sample.narrative:
        stale = [i for i in row.images if not (1 <= i <= sample.frame_count)]
        if stale:
            add(Finding("W2", FindingSeverity.WARNING, "narrative",
                        f"{row.phase.value} row references missing image(s) "
                        f"{stale}"))

    if cfg.min_frame_count is not None and sample.frame_count < cfg.min_frame_count:
        add(Finding("FRAME_COUNT", FindingSeverity.ERROR, "sample",
                    f"sample has {sample.frame_count} frames, "
                    f"need at least {cfg.min_frame_count}"))

    return ValidationReport.build(sample.sample_id, findings)


def _pronoun_number_findings(refs) -> list[Finding]:
    findings = []
    for ref in refs:
        if ref.tag is RefTag.GDL:
            continue
        word = ref.inner.strip().lower()
        if word in _SINGULAR_PRONOUNS and len(ref.ids) > 1:
            findings.append(Finding("W1", FindingSeverity.WARNING,
                                    f"image {ref.image_index}",
                                    f"singular pronoun {word!r} grounded to "
                                    f"{len(ref.ids)} entities"))
        elif word in _PLURAL_PRONOUNS and len(ref.ids) == 1:
            findings.append(Finding("W1", FindingSeverity.WARNING,
                                    f"image {ref.image_index}",
                                    f"plural pronoun {word!r} grounded to one entity"))
    return findings


@dataclass(frozen=True)
class SampleFailure:
    """A corpus record that never produced a sample (I/O or parse failure)."""

    sample_id: str
    message: str
    diagnostics: tuple[ParseDiagnostic, ...] = ()


@dataclass
class CorpusValidation:
    """Aggregate outcome of validating a corpus, deterministic in input order."""

    reports: list[ValidationReport] = field(default_factory=list)
    failures: list[SampleFailure] = field(default_factory=list)
    rule_counts: dict[str, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return len(self.reports) + len(self.failures)

    @property
    def passed(self) -> int:
        return sum(1 for r in self.reports if r.passed)

    @property
    def pass_rate(self) -> float:
        return self.passed / self.total if self.total else 0.0

    def to_json_dict(self) -> dict:
        return {
            "samples": self.total,
            "passed": self.passed,
            "failed_validation": sum(1 for r in self.reports if not r.passed),
            "failed_parse": len(self.failures),
            "pass_rate": self.pass_rate,
            "rule_counts": dict(sorted(self.rule_counts.items())),
        }


ValidatedItem = "tuple[StorySample, Sequence[ParseDiagnostic]] | SampleFailure"


def validate_corpus(items: Iterable, config: ValidationConfig | None = None
                    ) -> CorpusValidation:
    """Validate a stream of parsed samples.

    Each item is either (sample, cot_parse_diagnostics) or a SampleFailure;
    failures count against the pass rate but produce no report.
    """
    result = CorpusValidation()
    for item in items:
        if isinstance(item, SampleFailure):
            result.failures.append(item)
            continue
        sample, diagnostics = item
        report = validate_sample(sample, config, diagnostics)
        result.reports.append(report)
        for finding in report.findings:
            if finding.severity is FindingSeverity.ERROR:
                result.rule_counts[finding.rule] = result.rule_counts.get(finding.rule, 0) + 1
    return result
