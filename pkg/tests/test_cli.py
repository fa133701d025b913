import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from storyground.cli import build_parser

FIXTURES = Path(__file__).parent / "fixtures"


def run_cli(*args, env=None):
    return subprocess.run([sys.executable, "-m", "storyground", *args],
                          capture_output=True, text=True, env=env)


@pytest.fixture(scope="module")
def clean_jsonl(tmp_path_factory):
    from storyground.corpus import read_corpus, write_corpus

    path = tmp_path_factory.mktemp("corpora") / "clean.jsonl"
    write_corpus(read_corpus(FIXTURES / "corpus_clean"), path, "jsonl")
    return path


@pytest.fixture(scope="module")
def reid_inputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("reid")
    det = root / "detections.txt"
    det.write_text("0-person-0: person: 125,78,347,412\n"
                   "1-person-0: person: 130,80,350,410\n"
                   "1-car-0: car: 5,5,100,60\n", encoding="utf-8")
    v1 = [1.0, 0.0, 0.0]
    v1_near = list(np.array([1.0, 0.02, 0.0]) / np.linalg.norm([1.0, 0.02, 0.0]))
    v2 = [0.0, 1.0, 0.0]
    emb = {"version": 1, "embeddings": {
        "0-person-0": {"visual": v1},
        "1-person-0": {"visual": v1_near},  # cosine ~0.9998: joins at 0.75
        "1-car-0": {"visual": v2},
    }}
    embf = root / "embeddings.json"
    embf.write_text(json.dumps(emb), encoding="utf-8")
    return det, embf


class TestHelp:
    def test_top_level(self):
        proc = run_cli("--help")
        assert proc.returncode == 0
        for name in ("validate", "stats", "eval", "reid", "filter", "truncate",
                     "canon", "report"):
            assert name in proc.stdout

    @pytest.mark.parametrize("command,flags", [
        ("validate", ["--rules", "--mode", "--min-frames", "--jobs", "--reports"]),
        ("stats", ["--report-dir", "--jobs"]),
        ("eval", ["--iou-threshold", "--pretty", "--jobs"]),
        ("reid", ["--tau-visual", "--tau-face", "--z-gap", "--face-min-resolution",
                  "--face-confidence-min", "--background-labels", "--trace"]),
        ("filter", ["--fmt"]),
        ("truncate", ["--keep-empty-narrative-rows", "--refilter"]),
        ("canon", ["--mode"]),
        ("report", ["--sample-id"]),
        ("ingest", ["--id-key", "--cot-key", "--story-key", "--frame-count-key"]),
    ])
    def test_every_flag_documented(self, command, flags):
        proc = run_cli(command, "--help")
        assert proc.returncode == 0
        for flag in flags + ["--output"]:
            assert flag in proc.stdout, f"{command} --help misses {flag}"


class TestValidate:
    def test_clean_corpus_exit_zero(self):
        proc = run_cli("validate", str(FIXTURES / "corpus_clean"))
        assert proc.returncode == 0, proc.stderr
        summary = json.loads(proc.stdout)
        assert summary["passed"] == 1 and summary["pass_rate"] == 1.0

    def test_dirty_corpus_exit_one(self):
        proc = run_cli("validate", str(FIXTURES / "corpus_dirty"))
        assert proc.returncode == 1
        summary = json.loads(proc.stdout)
        assert summary["rule_counts"].get("R1") == 1
        assert summary["rule_counts"].get("R5") == 1

    def test_missing_path_exit_two(self):
        proc = run_cli("validate", "/no/such/corpus.jsonl")
        assert proc.returncode == 2

    def test_rule_subset(self):
        proc = run_cli("validate", str(FIXTURES / "corpus_dirty"),
                       "--rules", "R2,R4,R6")
        assert proc.returncode == 0

    def test_reports_jsonl(self, tmp_path):
        out = tmp_path / "reports.jsonl"
        run_cli("validate", str(FIXTURES / "corpus_dirty"), "--reports", str(out))
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 1
        report = json.loads(lines[0])
        assert report["sample_id"] == "974" and report["passed"] is False

    def test_jobs_parallel_matches_serial(self, clean_jsonl):
        serial = run_cli("validate", str(clean_jsonl))
        parallel = run_cli("validate", str(clean_jsonl), "--jobs", "2")
        assert serial.stdout == parallel.stdout


class TestStats:
    def test_schema_and_assets(self, tmp_path):
        out = tmp_path / "stats.json"
        assets = tmp_path / "assets"
        proc = run_cli("stats", str(FIXTURES / "corpus_clean"), "-o", str(out),
                       "--report-dir", str(assets))
        assert proc.returncode == 0, proc.stderr
        stats = json.loads(out.read_text())
        assert stats["story_count"] == 1 and stats["mean_frames"] == 5.0
        csvs = sorted(p.name for p in assets.glob("*.csv"))
        pngs = sorted(p.name for p in assets.glob("*.png"))
        assert csvs == ["persistence_curves.csv", "phase_coverage.csv",
                        "phase_density.csv", "pronoun_grounding.csv",
                        "refs_per_story.csv"]
        assert pngs == ["persistence_curves.png", "phase_density.png",
                        "pronoun_grounding.png", "refs_per_story.png"]
        for png in assets.glob("*.png"):
            assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"

    def test_identical_samples_identical_means(self, tmp_path, clean_jsonl):
        doubled = tmp_path / "double.jsonl"
        line = clean_jsonl.read_text()
        record = json.loads(line)
        record["sample_id"] = "974b"
        doubled.write_text(line + json.dumps(record) + "\n")
        single = json.loads(run_cli("stats", str(clean_jsonl)).stdout)
        double = json.loads(run_cli("stats", str(doubled)).stdout)
        assert double["story_count"] == 2
        assert double["mean_words"] == single["mean_words"]
        assert double["mean_frames"] == single["mean_frames"]


class TestEval:
    def test_self_eval_perfect_with_boxes(self, tmp_path):
        import random as _r

        from genlib import random_sample
        from storyground.corpus import sample_to_record, write_corpus

        rng = _r.Random(13)
        samples = [random_sample(rng, f"s{i}", with_boxes=True) for i in range(3)]
        ref = tmp_path / "ref.jsonl"
        write_corpus([sample_to_record(s) for s in samples], ref, "jsonl")
        proc = run_cli("eval", str(ref), str(ref), "-o", str(tmp_path / "eval.json"))
        assert proc.returncode == 0, proc.stderr
        payload = json.loads((tmp_path / "eval.json").read_text())
        assert payload["stories"] == 3 and payload["unpaired"] == []
        agg = payload["aggregate"]
        assert agg["precision"]["total"] == 1.0 and agg["recall"]["total"] == 1.0
        assert "P-Char" in proc.stderr and "mAP" in proc.stderr

    def test_unpaired_listed(self, tmp_path, clean_jsonl):
        other = tmp_path / "other.jsonl"
        record = json.loads(clean_jsonl.read_text())
        record["sample_id"] = "different"
        other.write_text(json.dumps(record) + "\n")
        proc = run_cli("eval", str(clean_jsonl), str(other))
        payload = json.loads(proc.stdout)
        assert sorted(payload["unpaired"]) == ["974", "different"]
        assert payload["stories"] == 0


class TestReid:
    def test_mapping_and_trace(self, reid_inputs, tmp_path):
        det, emb = reid_inputs
        trace_path = tmp_path / "trace.json"
        proc = run_cli("reid", str(det), str(emb), "--trace", str(trace_path))
        assert proc.returncode == 0, proc.stderr
        assert proc.stdout.splitlines() == [
            "0-person-0 → char1",
            "1-car-0 → obj1",
            "1-person-0 → char1",
        ]
        trace = json.loads(trace_path.read_text())
        assert len(trace["records"]) == 3

    def test_empty_input(self, tmp_path):
        det = tmp_path / "empty.txt"
        det.write_text("")
        emb = tmp_path / "emb.json"
        emb.write_text('{"version": 1, "embeddings": {}}')
        proc = run_cli("reid", str(det), str(emb))
        assert proc.returncode == 0 and proc.stdout == ""

    def test_bad_sidecar_exit_two(self, tmp_path):
        det = tmp_path / "d.txt"
        det.write_text("0-person-0: person: 1,2,3,4\n")
        emb = tmp_path / "e.json"
        emb.write_text("{}")
        assert run_cli("reid", str(det), str(emb)).returncode == 2


class TestTransformCommands:
    def test_filter_then_validate(self, tmp_path, clean_jsonl):
        out = tmp_path / "filtered.jsonl"
        proc = run_cli("filter", str(clean_jsonl), "-o", str(out))
        assert proc.returncode == 0, proc.stderr
        assert run_cli("validate", str(out)).returncode == 0

    def test_truncate(self, tmp_path, clean_jsonl):
        out = tmp_path / "cut.jsonl"
        proc = run_cli("truncate", str(clean_jsonl), "2", "-o", str(out))
        assert proc.returncode == 0, proc.stderr
        record = json.loads(out.read_text())
        assert record["frame_count"] == 2
        assert "image3" not in record["story"]
        # R6 (five-phase completeness) cannot survive a cut; R1-R5 and R7 must
        assert run_cli("validate", str(out),
                       "--rules", "R1,R2,R3,R4,R5,R7").returncode == 0


class TestCanon:
    def test_cot_idempotent(self, tmp_path):
        src = FIXTURES / "corpus_clean" / "974" / "cot.md"
        once = tmp_path / "once.md"
        proc = run_cli("canon", "cot", str(src), "-o", str(once))
        assert proc.returncode == 0, proc.stderr
        twice = tmp_path / "twice.md"
        assert run_cli("canon", "cot", str(once), "-o", str(twice)).returncode == 0
        assert once.read_text() == twice.read_text()

    def test_story(self, tmp_path):
        src = FIXTURES / "corpus_clean" / "974" / "story.txt"
        proc = run_cli("canon", "story", str(src))
        assert proc.returncode == 0
        assert proc.stdout.startswith("<gdi image1>\n")

    def test_invalid_input_exit_two(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("<gdi image1><gdx>boom</gdx></gdi>")
        assert run_cli("canon", "story", str(bad)).returncode == 2


class TestReport:
    def test_html_written(self, tmp_path):
        out = tmp_path / "r.html"
        proc = run_cli("report", str(FIXTURES / "corpus_clean"), "-o", str(out))
        assert proc.returncode == 0, proc.stderr
        html = out.read_text()
        assert html.startswith("<!DOCTYPE html>") and "gdi" not in html.split("<body>")[0]

    def test_deterministic(self, tmp_path):
        a, b = tmp_path / "a.html", tmp_path / "b.html"
        run_cli("report", str(FIXTURES / "corpus_clean"), "-o", str(a))
        run_cli("report", str(FIXTURES / "corpus_clean"), "-o", str(b))
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_sample_exit_two(self, tmp_path):
        proc = run_cli("report", str(FIXTURES / "corpus_clean"),
                       "--sample-id", "nope", "-o", str(tmp_path / "x.html"))
        assert proc.returncode == 2


class TestIngest:
    def test_external_jsonl(self, tmp_path):
        src = tmp_path / "hub.jsonl"
        record = {"story_id": 974,
                  "chain_of_thought": (FIXTURES / "corpus_clean" / "974" / "cot.md").read_text(),
                  "story": (FIXTURES / "corpus_clean" / "974" / "story.txt").read_text()}
        src.write_text(json.dumps(record) + "\n")
        out = tmp_path / "corpus.jsonl"
        proc = run_cli("ingest", str(src), "-o", str(out))
        assert proc.returncode == 0, proc.stderr
        assert run_cli("validate", str(out)).returncode == 0


class TestConfigFile:
    def test_config_prefills_flags(self, tmp_path, reid_inputs):
        det, emb = reid_inputs
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"tau_visual": 0.999999}))
        # the frame-1 person is near-identical but not bit-identical; an absurd
        # threshold from the config must split the pair
        proc = run_cli("--config", str(config), "reid", str(det), str(emb))
        assert proc.returncode == 0
        assert "1-person-0 → char2" in proc.stdout

    def test_flag_wins_over_config(self, tmp_path, reid_inputs):
        det, emb = reid_inputs
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"tau_visual": 0.999999}))
        proc = run_cli("--config", str(config), "reid", str(det), str(emb),
                       "--tau-visual", "0.7")
        assert "1-person-0 → char1" in proc.stdout

    def test_env_var_default(self, tmp_path, reid_inputs, monkeypatch):
        import os

        det, emb = reid_inputs
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"tau_visual": 0.999999}))
        env = dict(os.environ, STORYGROUND_CONFIG=str(config))
        proc = run_cli("reid", str(det), str(emb), env=env)
        assert "1-person-0 → char2" in proc.stdout


class TestParserObject:
    def test_build_parser_exposes_all_subcommands(self):
        parser = build_parser()
        actions = [a for a in parser._actions
                   if isinstance(a, type(parser._subparsers._group_actions[0]))]
        names = set(actions[0].choices)
        assert names == {"validate", "stats", "eval", "reid", "filter", "truncate",
                         "canon", "report", "ingest"}
