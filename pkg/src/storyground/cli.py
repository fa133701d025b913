"""Command-line surface.

Subcommands: validate | stats | eval | reid | filter | truncate | canon |
report | ingest. Machine-readable JSON goes to stdout or the -o file; human
tables go to stderr so pipes stay clean.

Exit codes: 0 success, 1 policy failure (validation errors), 2 operational
failure (I/O, malformed records, unparseable inputs).

A JSON config file (flag names as keys) can prefill any flag; pass it with
--config or point the STORYGROUND_CONFIG environment variable at it.
Explicit flags always win over the file.
"""

from __future__ import annotations

import argparse
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

from . import __version__
from .corpus import (
    CorpusDiagnostic,
    SampleRecord,
    adapt_external_record,
    parse_record,
    read_corpus,
    sample_to_record,
    write_corpus,
)
from .cot import parse_cot, render_cot
from .diagnostics import ParseMode
from .htmlreport import render_report
from .metrics import (
    DEFAULT_IOU_THRESHOLD,
    GroundingEval,
    evaluate_story,
    grounding_sequence,
    mean_average_precision,
)
from .reid import MatcherConfig, SidecarFormatError, match_entities, read_detections, \
    mapping_lines
from .stats import StatsAccumulator, write_stats_tables
from .story import parse_story, render_story
from .transform import filter_unreferenced, truncate_to_images
from .validation import SampleFailure, ValidationConfig, validate_corpus

CONFIG_ENV_VAR = "STORYGROUND_CONFIG"

OK, POLICY_FAILURE, OPERATIONAL_FAILURE = 0, 1, 2


def _load_config(path: Optional[str]) -> dict:
    path = path or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object of flag values")
    return config


def _setting(args: argparse.Namespace, config: dict, key: str, default):
    """Flag value if given, else config-file value, else the built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    if key in config:
        return config[key]
    return default


def _emit_json(payload: dict, out: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _parse_mode(name: str) -> ParseMode:
    return ParseMode.STRICT if name == "strict" else ParseMode.LENIENT


def _jobs_map(fn, items: list, jobs: int) -> list:
    if jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (jobs * 4))))


def _report_corpus_problems(diagnostics: list[CorpusDiagnostic]) -> None:
    for diag in diagnostics:
        print(f"record error: {diag.location}: {diag.message}", file=sys.stderr)


# -- validate -----------------------------------------------------------------


def _parse_lenient(record: SampleRecord):
    return parse_record(record, ParseMode.LENIENT)


def _parse_strict(record: SampleRecord):
    return parse_record(record, ParseMode.STRICT)


def cmd_validate(args: argparse.Namespace, config: dict) -> int:
    mode = _parse_mode(_setting(args, config, "mode", "lenient"))
    jobs = int(_setting(args, config, "jobs", 1))
    rules = _setting(args, config, "rules", None)
    vcfg = ValidationConfig()
    if rules:
        names = [r.strip() for r in rules.split(",") if r.strip()]
        vcfg = ValidationConfig(enabled_rules=frozenset(names))
    min_frames = _setting(args, config, "min_frames", None)
    if min_frames is not None:
        vcfg = ValidationConfig(vcfg.enabled_rules, vcfg.severity_overrides,
                                vcfg.pronoun_number_check, int(min_frames))

    corpus_problems: list[CorpusDiagnostic] = []
    records = list(read_corpus(args.corpus, diagnostics=corpus_problems))
    worker = _parse_strict if mode is ParseMode.STRICT else _parse_lenient
    parsed = _jobs_map(worker, records, jobs)
    items = []
    for item in parsed:
        if isinstance(item, SampleFailure):
            items.append(item)
        else:
            items.append((item.sample, item.cot_diagnostics))
    result = validate_corpus(items, vcfg)

    if args.reports:
        with open(args.reports, "w", encoding="utf-8") as fh:
            for report in result.reports:
                fh.write(json.dumps({
                    "sample_id": report.sample_id,
                    "passed": report.passed,
                    "findings": [
                        {"rule": f.rule, "severity": f.severity.value,
                         "location": f.location, "message": f.message}
                        for f in report.findings
                    ],
                }, sort_keys=True) + "\n")

    summary = result.to_json_dict()
    summary["record_errors"] = len(corpus_problems)
    _emit_json(summary, args.output)
    _report_corpus_problems(corpus_problems)
    for failure in result.failures:
        print(f"parse failure: {failure.sample_id}: {failure.message}", file=sys.stderr)

    if corpus_problems or result.failures:
        return OPERATIONAL_FAILURE
    if any(not r.passed for r in result.reports):
        return POLICY_FAILURE
    return OK


# -- stats --------------------------------------------------------------------


def cmd_stats(args: argparse.Namespace, config: dict) -> int:
    jobs = int(_setting(args, config, "jobs", 1))
    corpus_problems: list[CorpusDiagnostic] = []
    records = list(read_corpus(args.corpus, diagnostics=corpus_problems))
    parsed = _jobs_map(_parse_lenient, records, jobs)

    failures = [p for p in parsed if isinstance(p, SampleFailure)]
    acc = StatsAccumulator()
    for item in parsed:
        if not isinstance(item, SampleFailure):
            acc.add(item.sample)
    stats = acc.finish()

    _emit_json(stats.to_json_dict(), args.output)
    if args.report_dir:
        from .figures import save_stats_figures

        written = write_stats_tables(stats, args.report_dir)
        written += save_stats_figures(stats, args.report_dir)
        for path in written:
            print(f"wrote {path}", file=sys.stderr)

    _report_corpus_problems(corpus_problems)
    for failure in failures:
        print(f"parse failure: {failure.sample_id}: {failure.message}", file=sys.stderr)
    return OPERATIONAL_FAILURE if (corpus_problems or failures) else OK


# -- eval ---------------------------------------------------------------------


def _eval_table(rows: list[tuple[str, GroundingEval]], map_value: float) -> str:
    header = (f"{'Story':<24} {'P-Char':>7} {'P-Obj':>7} {'P-Total':>8} {'mAP':>7} "
              f"{'R-Char':>7} {'R-Obj':>7} {'R-Total':>8} {'F1':>7}")
    lines = [header, "-" * len(header)]
    for name, ev in rows:
        lines.append(f"{name:<24} {ev.precision_char:>7.3f} {ev.precision_obj:>7.3f} "
                     f"{ev.precision_total:>8.3f} {ev.ap:>7.3f} {ev.recall_char:>7.3f} "
                     f"{ev.recall_obj:>7.3f} {ev.recall_total:>8.3f} {ev.f1_total:>7.3f}")
    mean = _mean_eval([ev for _, ev in rows])
    lines.append("-" * len(header))
    lines.append(f"{'mean':<24} {mean.precision_char:>7.3f} {mean.precision_obj:>7.3f} "
                 f"{mean.precision_total:>8.3f} {map_value:>7.3f} {mean.recall_char:>7.3f} "
                 f"{mean.recall_obj:>7.3f} {mean.recall_total:>8.3f} {mean.f1_total:>7.3f}")
    return "\n".join(lines)


def _mean_eval(evals: list[GroundingEval]) -> GroundingEval:
    n = max(len(evals), 1)

    def mean(attr: str) -> float:
        return sum(getattr(e, attr) for e in evals) / n

    return GroundingEval(mean("precision_char"), mean("precision_obj"),
                         mean("precision_total"), mean("recall_char"),
                         mean("recall_obj"), mean("recall_total"),
                         mean("f1_total"), mean("ap"))


def _collect_samples(path: str, jobs: int, problems: list[CorpusDiagnostic]
                     ) -> tuple[dict, list[SampleFailure]]:
    records = list(read_corpus(path, diagnostics=problems))
    parsed = _jobs_map(_parse_lenient, records, jobs)
    samples = {}
    failures = []
    for item in parsed:
        if isinstance(item, SampleFailure):
            failures.append(item)
        else:
            samples[item.sample.sample_id] = item.sample
    return samples, failures


def cmd_eval(args: argparse.Namespace, config: dict) -> int:
    jobs = int(_setting(args, config, "jobs", 1))
    iou = float(_setting(args, config, "iou_threshold", DEFAULT_IOU_THRESHOLD))
    problems: list[CorpusDiagnostic] = []
    reference, ref_failures = _collect_samples(args.reference, jobs, problems)
    candidate, cand_failures = _collect_samples(args.candidate, jobs, problems)

    shared = sorted(set(reference) & set(candidate))
    unpaired = sorted(set(reference) ^ set(candidate))
    per_sample: list[tuple[str, GroundingEval]] = []
    skipped_refs = 0
    for sample_id in shared:
        ref_items, ref_skipped = grounding_sequence(reference[sample_id])
        cand_items, cand_skipped = grounding_sequence(candidate[sample_id])
        skipped_refs += ref_skipped + cand_skipped
        per_sample.append((sample_id, evaluate_story(ref_items, cand_items, iou)))

    payload = {
        "stories": len(per_sample),
        "unpaired": unpaired,
        "iou_threshold": iou,
        "skipped_boxless_references": skipped_refs,
        "per_sample": {sid: ev.to_json_dict() for sid, ev in per_sample},
    }
    if per_sample:
        map_value = mean_average_precision([ev for _, ev in per_sample])
        mean = _mean_eval([ev for _, ev in per_sample])
        aggregate = mean.to_json_dict()
        aggregate["map"] = map_value
        payload["aggregate"] = aggregate
        table = _eval_table(per_sample, map_value)
        if args.pretty:
            Path(args.pretty).write_text(table + "\n", encoding="utf-8")
        else:
            print(table, file=sys.stderr)
    _emit_json(payload, args.output)

    for failure in ref_failures + cand_failures:
        print(f"parse failure: {failure.sample_id}: {failure.message}", file=sys.stderr)
    if problems or ref_failures or cand_failures:
        _report_corpus_problems(problems)
        return OPERATIONAL_FAILURE
    return OK


# -- reid ---------------------------------------------------------------------


def cmd_reid(args: argparse.Namespace, config: dict) -> int:
    labels = _setting(args, config, "background_labels", None)
    kwargs = {}
    for key in ("tau_visual", "tau_face", "z_gap", "face_min_resolution",
                "face_confidence_min"):
        value = _setting(args, config, key, None)
        if value is not None:
            kwargs[key] = type(MatcherConfig.__dataclass_fields__[key].default)(value)
    if labels:
        kwargs["background_labels"] = frozenset(
            l.strip() for l in labels.split(",") if l.strip())
    cfg = MatcherConfig(**kwargs)

    detections = read_detections(args.detections, args.embeddings)
    entities, trace = match_entities(detections, cfg)
    text = "\n".join(mapping_lines(trace))
    if text:
        text += "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.trace:
        Path(args.trace).write_text(
            json.dumps(trace.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8")
    print(f"{len(detections)} detections -> {len(entities)} entities", file=sys.stderr)
    return OK


# -- filter / truncate ---------------------------------------------------------


def _filter_worker(record: SampleRecord):
    item = parse_record(record, ParseMode.LENIENT)
    if isinstance(item, SampleFailure):
        return item
    return sample_to_record(filter_unreferenced(item.sample), item.think_wrapped,
                            record.detections_text, record.mapping_text)


def _truncate_worker(record: SampleRecord, max_images: int,
                     keep_empty_rows: bool, refilter: bool):
    item = parse_record(record, ParseMode.LENIENT)
    if isinstance(item, SampleFailure):
        return item
    sample = truncate_to_images(item.sample, max_images,
                                drop_empty_narrative_rows=not keep_empty_rows,
                                refilter=refilter)
    return sample_to_record(sample, item.think_wrapped,
                            record.detections_text, record.mapping_text)


def _transform_corpus(args, config: dict, worker) -> int:
    jobs = int(_setting(args, config, "jobs", 1))
    problems: list[CorpusDiagnostic] = []
    records = list(read_corpus(args.corpus, diagnostics=problems))
    results = _jobs_map(worker, records, jobs)
    out_records = [r for r in results if not isinstance(r, SampleFailure)]
    failures = [r for r in results if isinstance(r, SampleFailure)]
    count = write_corpus(out_records, args.output, args.fmt)
    print(f"wrote {count} samples to {args.output}", file=sys.stderr)
    _report_corpus_problems(problems)
    for failure in failures:
        print(f"parse failure: {failure.sample_id}: {failure.message}", file=sys.stderr)
    return OPERATIONAL_FAILURE if (problems or failures) else OK


def cmd_filter(args: argparse.Namespace, config: dict) -> int:
    return _transform_corpus(args, config, _filter_worker)


def cmd_truncate(args: argparse.Namespace, config: dict) -> int:
    worker = functools.partial(
        _truncate_worker, max_images=args.max_images,
        keep_empty_rows=bool(args.keep_empty_narrative_rows),
        refilter=bool(args.refilter))
    return _transform_corpus(args, config, worker)


# -- canon ---------------------------------------------------------------------


def cmd_canon(args: argparse.Namespace, config: dict) -> int:
    mode = _parse_mode(_setting(args, config, "mode", "strict"))
    text = Path(args.input).read_text(encoding="utf-8")
    if args.kind == "cot":
        doc, diags = parse_cot(text, mode)
        rendered = render_cot(doc) if doc is not None else None
    else:
        story, diags = parse_story(text, mode)
        rendered = render_story(story) if story is not None else None
    for diag in diags:
        print(f"{args.input}:{diag}", file=sys.stderr)
    if rendered is None:
        return OPERATIONAL_FAILURE
    if args.output:
        Path(args.output).write_text(rendered, encoding="utf-8")
    else:
        sys.stdout.write(rendered)
    return OK


# -- report ---------------------------------------------------------------------


def cmd_report(args: argparse.Namespace, config: dict) -> int:
    problems: list[CorpusDiagnostic] = []
    wanted = args.sample_id
    chosen: Optional[SampleRecord] = None
    seen = []
    for record in read_corpus(args.corpus, diagnostics=problems):
        seen.append(record.sample_id)
        if wanted is None or record.sample_id == wanted:
            chosen = record
            if wanted is not None:
                break
            if len(seen) > 1:
                print(f"corpus holds several samples ({', '.join(seen)}); "
                      "pick one with --sample-id", file=sys.stderr)
                return OPERATIONAL_FAILURE
    if chosen is None:
        print(f"sample {wanted!r} not found in {args.corpus}", file=sys.stderr)
        return OPERATIONAL_FAILURE
    item = parse_record(chosen, ParseMode.LENIENT)
    if isinstance(item, SampleFailure):
        print(f"parse failure: {item.sample_id}: {item.message}", file=sys.stderr)
        return OPERATIONAL_FAILURE
    html = render_report(item.sample)
    Path(args.output).write_text(html, encoding="utf-8")
    print(f"wrote {args.output}", file=sys.stderr)
    return OK


# -- ingest ----------------------------------------------------------------------


def cmd_ingest(args: argparse.Namespace, config: dict) -> int:
    field_map = {}
    for target, flag in (("sample_id", "id_key"), ("cot", "cot_key"),
                         ("story", "story_key"), ("frame_count", "frame_count_key")):
        value = getattr(args, flag)
        if value:
            field_map[target] = value
    records = []
    errors = 0
    with open(args.source, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(adapt_external_record(obj, field_map))
            except (json.JSONDecodeError, ValueError) as exc:
                errors += 1
                print(f"{args.source}:{lineno}: {exc}", file=sys.stderr)
    count = write_corpus(records, args.output, "jsonl")
    print(f"converted {count} records ({errors} errors)", file=sys.stderr)
    return OPERATIONAL_FAILURE if errors else OK


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="storyground",
        description="Tools for grounded visual-narrative corpora: parse, "
                    "validate, transform, match and measure.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON config file prefilling flag values "
                        f"(default: ${CONFIG_ENV_VAR})")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="run integrity rules over a corpus")
    p.add_argument("corpus", help="corpus file (JSON lines) or directory tree")
    p.add_argument("-o", "--output", help="write the JSON summary here instead of stdout")
    p.add_argument("--reports", help="write per-sample reports as JSON lines")
    p.add_argument("--rules", help="comma-separated rule subset, e.g. R1,R4")
    p.add_argument("--mode", choices=["strict", "lenient"], help="parse mode "
                   "(default lenient)")
    p.add_argument("--min-frames", dest="min_frames", type=int,
                   help="require at least this many frames per sample")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("stats", help="compute corpus statistics")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", help="write the stats JSON here instead of stdout")
    p.add_argument("--report-dir", dest="report_dir",
                   help="also write CSV tables and PNG figures into this directory")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", help="score a candidate corpus against a reference")
    p.add_argument("reference", help="reference corpus")
    p.add_argument("candidate", help="candidate corpus, aligned by sample id")
    p.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    p.add_argument("--iou-threshold", dest="iou_threshold", type=float,
                   help=f"match threshold (default {DEFAULT_IOU_THRESHOLD})")
    p.add_argument("--pretty", help="write the aligned text table to this file "
                   "instead of stderr")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("reid", help="group detections into cross-frame entities")
    p.add_argument("detections", help="detections file: '<frame>-<class>-<n>: "
                   "<label>: x1,y1,x2,y2' per line")
    p.add_argument("embeddings", help="embedding sidecar JSON")
    p.add_argument("-o", "--output", help="write mapping lines here instead of stdout")
    p.add_argument("--trace", help="write the match trace JSON here")
    p.add_argument("--tau-visual", dest="tau_visual", type=float,
                   help="visual similarity threshold")
    p.add_argument("--tau-face", dest="tau_face", type=float,
                   help="face similarity threshold")
    p.add_argument("--z-gap", dest="z_gap", type=float,
                   help="statistical-gap factor for ambiguous matches")
    p.add_argument("--face-min-resolution", dest="face_min_resolution", type=int,
                   help="minimum face crop resolution in pixels")
    p.add_argument("--face-confidence-min", dest="face_confidence_min", type=float,
                   help="minimum face detector confidence")
    p.add_argument("--background-labels", dest="background_labels",
                   help="comma-separated class labels that map to bg ids")
    p.set_defaults(func=cmd_reid)

    p = sub.add_parser("filter", help="drop scene-table rows the story never references")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="output corpus path")
    p.add_argument("--fmt", choices=["jsonl", "dir"], help="output format "
                   "(default: by extension)")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("truncate", help="cut samples down to their first N images")
    p.add_argument("corpus")
    p.add_argument("max_images", type=int)
    p.add_argument("-o", "--output", required=True, help="output corpus path")
    p.add_argument("--fmt", choices=["jsonl", "dir"], help="output format "
                   "(default: by extension)")
    p.add_argument("--keep-empty-narrative-rows", action="store_true", default=None,
                   help="keep narrative rows whose images were all cut")
    p.add_argument("--refilter", action="store_true", default=None,
                   help="also drop rows for entities the shortened story "
                        "no longer references")
    p.add_argument("--jobs", type=int, help="parallel workers (default 1)")
    p.set_defaults(func=cmd_truncate)

    p = sub.add_parser("canon", help="parse and re-render text in canonical form")
    p.add_argument("kind", choices=["cot", "story"], help="what the input file holds")
    p.add_argument("input", help="input text file")
    p.add_argument("-o", "--output", help="write canonical text here instead of stdout")
    p.add_argument("--mode", choices=["strict", "lenient"], help="parse mode "
                   "(default strict)")
    p.set_defaults(func=cmd_canon)

    p = sub.add_parser("report", help="render one sample as a standalone HTML page")
    p.add_argument("corpus")
    p.add_argument("-o", "--output", required=True, help="output HTML path")
    p.add_argument("--sample-id", dest="sample_id", help="which sample to render "
                   "(optional when the corpus holds exactly one)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("ingest", help="convert an externally published JSONL corpus "
                       "into the canonical record schema")
    p.add_argument("source", help="external JSON-lines file")
    p.add_argument("-o", "--output", required=True, help="output corpus (JSON lines)")
    p.add_argument("--id-key", dest="id_key", help="source column holding the sample id")
    p.add_argument("--cot-key", dest="cot_key", help="source column holding the "
                   "scene-analysis text")
    p.add_argument("--story-key", dest="story_key", help="source column holding the "
                   "story text")
    p.add_argument("--frame-count-key", dest="frame_count_key",
                   help="source column holding the frame count")
    p.set_defaults(func=cmd_ingest)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = _load_config(args.config)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return OPERATIONAL_FAILURE
    # the config file mirrors every optional flag; explicit flags win
    for key, value in config.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, value)
    try:
        return args.func(args, config)
    except (OSError, SidecarFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OPERATIONAL_FAILURE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return OPERATIONAL_FAILURE


if __name__ == "__main__":
    sys.exit(main())
