"""Report rendering: fixed formats, deterministic bytes."""

from __future__ import annotations

import json

import pytest

from distracteval.metrics import (
    ErrorAttribution,
    MetricsReport,
    RecognitionBreakdown,
    WeakIrrelevance,
)
from distracteval.report import ReportError, ReportFormat, render_report


def full_report() -> MetricsReport:
    return MetricsReport(
        accuracy={"cot": {"clean": 0.778, "perturbed": 0.552}, "sp": {"clean": 0.614}},
        config_echo={"model": "default", "seed": "0"},
        identification_rate=0.788,
        recognition_breakdown=RecognitionBreakdown(
            irrelevant_correct=0.788, other_information=0.022, no_irrelevant=0.190
        ),
        error_attribution=ErrorAttribution(
            errors_on_perturbed_only=304, identified_among_errors=232, fraction=232 / 304
        ),
        weak_irrelevance={"cot": WeakIrrelevance(unrecognized=10, weak=4, proportion=0.4)},
    )


def accuracy_only_report() -> MetricsReport:
    return MetricsReport(accuracy={"sp": {"clean": 0.5}}, config_echo={"model": "default"})


# ---------------------------------------------------------------------------
# markdown


def test_markdown_accuracy_grid() -> None:
    text = render_report(full_report(), "md")
    lines = text.splitlines()
    assert lines[0] == "# Evaluation report"
    assert "## Accuracy (%)" in lines
    grid_at = lines.index("| Method | clean | perturbed |")
    assert lines[grid_at + 1] == "| --- | --- | --- |"
    assert lines[grid_at + 2] == "| cot | 77.8 | 55.2 |"
    # sp has no perturbed cell, so that column renders a dash.
    assert lines[grid_at + 3] == "| sp | 61.4 | - |"


def test_markdown_identification_section() -> None:
    lines = render_report(full_report(), "md").splitlines()
    assert "## Irrelevance identification" in lines
    assert "Identification rate: 78.8%" in lines
    table_at = lines.index("| Category | Proportion |")
    assert lines[table_at + 2] == "| irrelevant_correct | 0.788 |"
    assert lines[table_at + 3] == "| other_information | 0.022 |"
    assert lines[table_at + 4] == "| no_irrelevant | 0.190 |"


def test_markdown_error_attribution_line() -> None:
    text = render_report(full_report(), "md")
    assert (
        "76.3% (232/304) of newly wrong answers had their "
        "irrelevant information recognized." in text
    )


def test_markdown_attribution_without_errors() -> None:
    report = MetricsReport(
        accuracy={"sp": {"clean": 1.0}},
        config_echo={},
        error_attribution=ErrorAttribution(
            errors_on_perturbed_only=0, identified_among_errors=0, fraction=None
        ),
    )
    assert "No errors were introduced by perturbation." in render_report(report, "md")


def test_markdown_weak_irrelevance_table() -> None:
    lines = render_report(full_report(), "md").splitlines()
    assert "## Weak irrelevance" in lines
    header_at = lines.index("| Method | Unrecognized | Still correct | Proportion |")
    assert lines[header_at + 2] == "| cot | 10 | 4 | 40.0% |"


def test_markdown_configuration_sorted() -> None:
    lines = render_report(full_report(), "md").splitlines()
    key_rows = [line for line in lines[lines.index("## Configuration") :] if line.startswith("| ")]
    assert key_rows == ["| Key | Value |", "| --- | --- |", "| model | default |", "| seed | 0 |"]


def test_markdown_omits_absent_sections() -> None:
    text = render_report(accuracy_only_report(), "md")
    assert "## Irrelevance identification" not in text
    assert "## Error attribution" not in text
    assert "## Weak irrelevance" not in text
    assert "## Configuration" in text


# ---------------------------------------------------------------------------
# csv


def test_csv_rows() -> None:
    text = render_report(full_report(), ReportFormat.CSV)
    lines = text.splitlines()
    assert lines[0] == "section,name,dataset,value"
    assert "accuracy,cot,clean,77.8" in lines
    assert "accuracy,cot,perturbed,55.2" in lines
    assert "accuracy,sp,clean,61.4" in lines
    assert "identification_rate,,,78.8" in lines
    assert "recognition_breakdown,irrelevant_correct,,0.788" in lines
    assert "recognition_breakdown,no_irrelevant,,0.190" in lines
    assert "error_attribution,errors_on_perturbed_only,,304" in lines
    assert "error_attribution,identified_among_errors,,232" in lines
    assert "error_attribution,fraction,,76.3" in lines
    assert "weak_irrelevance,cot,,40.0" in lines
    assert "config,model,,default" in lines
    assert lines[-1] == "config,seed,,0"


def test_csv_skips_missing_cells() -> None:
    lines = render_report(accuracy_only_report(), "csv").splitlines()
    assert lines == [
        "section,name,dataset,value",
        "accuracy,sp,clean,50.0",
        "config,model,,default",
    ]


# ---------------------------------------------------------------------------
# json


def test_json_round_trips_through_report_model() -> None:
    report = full_report()
    text = render_report(report, "json")
    assert text.endswith("\n")
    assert MetricsReport.from_dict(json.loads(text)) == report


def test_json_is_key_sorted() -> None:
    payload = json.loads(render_report(full_report(), "json"))
    assert list(payload) == sorted(payload)


# ---------------------------------------------------------------------------
# format handling


def test_render_is_deterministic() -> None:
    for fmt in ReportFormat:
        assert render_report(full_report(), fmt) == render_report(full_report(), fmt)


def test_format_accepts_enum_and_string() -> None:
    assert render_report(full_report(), ReportFormat.MARKDOWN) == render_report(
        full_report(), "md"
    )


def test_unknown_format_rejected() -> None:
    with pytest.raises(ValueError):
        render_report(full_report(), "xml")


def test_report_error_is_a_value_error() -> None:
    assert issubclass(ReportError, ValueError)
