"""CLI behavior: argument handling, config defaults, exit codes."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from distracteval.cli import main
from distracteval.corpus import CorpusFormat, load_corpus
from distracteval.metrics import MetricsReport

from test_service import metrics_file, record_cache, write_gsm8k


def run_cli(capsys, *argv: str) -> tuple[int, str, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# ---------------------------------------------------------------------------
# generate


def test_generate_writes_corpus_and_prints_summary(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    out = tmp_path / "perturbed.jsonl"
    code, stdout, _ = run_cli(capsys, "generate", "--corpus", str(source), "--out", str(out))
    assert code == 0
    body = json.loads(stdout)
    assert body["record_count"] == 3
    assert len(load_corpus(out, CorpusFormat.JSONL_GSMIR)) == 3


def test_generate_accepts_shuffle_position(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    out = tmp_path / "perturbed.jsonl"
    code, _, _ = run_cli(
        capsys, "generate", "--corpus", str(source), "--out", str(out), "--position", "shuffle"
    )
    assert code == 0


def test_generate_rejects_bad_position(tmp_path: Path) -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["generate", "--corpus", "c.jsonl", "--out", "o.jsonl", "--position", "bad"])
    assert excinfo.value.code == 2


def test_generate_maps_service_errors_to_exit_1(tmp_path: Path, capsys) -> None:
    code, _, stderr = run_cli(
        capsys,
        "generate",
        "--corpus",
        str(tmp_path / "nope.jsonl"),
        "--out",
        str(tmp_path / "o.jsonl"),
    )
    assert code == 1
    assert stderr.startswith("error: FileNotFoundError:")


# ---------------------------------------------------------------------------
# run / analyze / report


def test_run_analyze_report_round_trip(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    cache = tmp_path / "cache.jsonl"
    record_cache(source, cache)
    run_dir = tmp_path / "run"

    code, stdout, _ = run_cli(
        capsys,
        "run",
        "--corpus",
        str(source),
        "--corpus-format",
        "jsonl_gsm8k",
        "--method",
        "cot",
        "--cache",
        str(cache),
        "--out",
        str(run_dir),
    )
    assert code == 0
    body = json.loads(stdout)
    assert body["record_count"] == 3
    assert body["accuracy"] == pytest.approx(2 / 3)

    metrics_path = tmp_path / "metrics.json"
    code, stdout, _ = run_cli(
        capsys, "analyze", "--run-dir", str(run_dir), "--out", str(metrics_path)
    )
    assert code == 0
    assert json.loads(stdout)["report"]["accuracy"]["cot"]["problems"] == pytest.approx(2 / 3)
    assert metrics_path.exists()

    report_path = tmp_path / "report.md"
    code, stdout, _ = run_cli(
        capsys, "report", "--metrics", str(metrics_path), "--out", str(report_path)
    )
    assert code == 0
    # Markdown is printed raw, not wrapped in the response JSON.
    assert stdout.startswith("# Evaluation report")
    assert report_path.read_text(encoding="utf-8") == stdout


def test_run_requires_known_method() -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["run", "--corpus", "c.jsonl", "--method", "tree"])
    assert excinfo.value.code == 2


def test_run_replay_without_cache_exits_1(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    code, _, stderr = run_cli(
        capsys,
        "run",
        "--corpus",
        str(source),
        "--corpus-format",
        "jsonl_gsm8k",
        "--method",
        "cot",
    )
    assert code == 1
    assert "replay mode requires a cache path" in stderr


def test_report_renders_csv(tmp_path: Path, capsys) -> None:
    path = metrics_file(tmp_path / "metrics.json")
    code, stdout, _ = run_cli(capsys, "report", "--metrics", str(path), "--format", "csv")
    assert code == 0
    assert stdout.splitlines()[0] == "section,name,dataset,value"


def test_report_rejects_unknown_format(tmp_path: Path) -> None:
    with pytest.raises(SystemExit) as excinfo:
        main(["report", "--metrics", "m.json", "--format", "xml"])
    assert excinfo.value.code == 2


# ---------------------------------------------------------------------------
# cache verify


def test_cache_verify_ok(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    cache = tmp_path / "cache.jsonl"
    record_cache(source, cache)
    code, stdout, _ = run_cli(capsys, "cache", "verify", "--cache", str(cache))
    assert code == 0
    assert stdout == "ok: 3 entries\n"


def test_cache_verify_prints_issues(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    cache = tmp_path / "cache.jsonl"
    record_cache(source, cache)
    rows = cache.read_text(encoding="utf-8").splitlines()
    row = json.loads(rows[0])
    row["key"] = ("0" if row["key"][0] != "0" else "1") + row["key"][1:]
    cache.write_text("\n".join([json.dumps(row)] + rows[1:]) + "\n", encoding="utf-8")

    code, _, stderr = run_cli(capsys, "cache", "verify", "--cache", str(cache))
    assert code == 1
    assert stderr.startswith("issue: line 1")


# ---------------------------------------------------------------------------
# config files


def test_config_file_sets_defaults(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    config = tmp_path / "defaults.cfg"
    config.write_text("# defaults\nseed = 5\nposition = 1\n", encoding="utf-8")

    configured = tmp_path / "configured.jsonl"
    code, _, _ = run_cli(
        capsys,
        "--config",
        str(config),
        "generate",
        "--corpus",
        str(source),
        "--out",
        str(configured),
    )
    assert code == 0

    explicit = tmp_path / "explicit.jsonl"
    run_cli(
        capsys,
        "generate",
        "--corpus",
        str(source),
        "--out",
        str(explicit),
        "--seed",
        "5",
        "--position",
        "1",
    )
    assert configured.read_text(encoding="utf-8") == explicit.read_text(encoding="utf-8")


def test_explicit_flags_override_config(tmp_path: Path, capsys) -> None:
    source = write_gsm8k(tmp_path / "problems.jsonl")
    config = tmp_path / "defaults.cfg"
    config.write_text("seed = 5\n", encoding="utf-8")

    overridden = tmp_path / "overridden.jsonl"
    run_cli(
        capsys,
        "--config",
        str(config),
        "generate",
        "--corpus",
        str(source),
        "--out",
        str(overridden),
        "--seed",
        "9",
    )
    plain = tmp_path / "plain.jsonl"
    run_cli(capsys, "generate", "--corpus", str(source), "--out", str(plain), "--seed", "9")
    assert overridden.read_text(encoding="utf-8") == plain.read_text(encoding="utf-8")


def test_malformed_config_exits_2(tmp_path: Path, capsys) -> None:
    config = tmp_path / "bad.cfg"
    config.write_text("seed 5\n", encoding="utf-8")
    code, _, stderr = run_cli(
        capsys, "--config", str(config), "generate", "--corpus", "c", "--out", "o"
    )
    assert code == 2
    assert "expected key=value" in stderr


def test_missing_config_exits_2(tmp_path: Path, capsys) -> None:
    code, _, stderr = run_cli(
        capsys, "--config", str(tmp_path / "nope.cfg"), "generate", "--corpus", "c", "--out", "o"
    )
    assert code == 2
    assert stderr.startswith("error:")
