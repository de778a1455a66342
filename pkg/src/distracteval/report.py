"""Deterministic rendering of metrics reports.

Accuracies and rates render as percentages with one decimal; recognition
breakdown proportions render at three decimals in a fixed three-row table.
No timestamps or environment details ever enter a report, so the same
metrics always render to the same bytes.

The CSV format carries scalar metrics only; per-method weak-irrelevance
details appear in the markdown and JSON forms.
"""

from __future__ import annotations

import csv
import io
import json
from enum import Enum

from .metrics import MetricsReport


class ReportError(ValueError):
    """A report cannot be rendered as requested."""


class ReportFormat(str, Enum):
    MARKDOWN = "md"
    CSV = "csv"
    JSON = "json"


def _pct(value: float) -> str:
    return f"{value * 100:.1f}"


def _render_markdown(report: MetricsReport) -> str:
    lines: list[str] = ["# Evaluation report", ""]

    datasets = report.datasets()
    lines.append("## Accuracy (%)")
    lines.append("")
    lines.append("| Method | " + " | ".join(datasets) + " |")
    lines.append("| --- |" + " --- |" * len(datasets))
    for method in sorted(report.accuracy):
        cells = []
        for dataset in datasets:
            value = report.accuracy[method].get(dataset)
            cells.append("-" if value is None else _pct(value))
        lines.append(f"| {method} | " + " | ".join(cells) + " |")
    lines.append("")

    if report.identification_rate is not None:
        lines.append("## Irrelevance identification")
        lines.append("")
        lines.append(f"Identification rate: {_pct(report.identification_rate)}%")
        lines.append("")
    if report.recognition_breakdown is not None:
        lines.append("| Category | Proportion |")
        lines.append("| --- | --- |")
        for name, value in report.recognition_breakdown.as_rows():
            lines.append(f"| {name} | {value:.3f} |")
        lines.append("")

    if report.error_attribution is not None:
        attribution = report.error_attribution
        lines.append("## Error attribution")
        lines.append("")
        if attribution.fraction is None:
            lines.append("No errors were introduced by perturbation.")
        else:
            lines.append(
                f"{_pct(attribution.fraction)}% "
                f"({attribution.identified_among_errors}/{attribution.errors_on_perturbed_only}) "
                "of newly wrong answers had their irrelevant information recognized."
            )
        lines.append("")

    if report.weak_irrelevance is not None:
        lines.append("## Weak irrelevance")
        lines.append("")
        lines.append("| Method | Unrecognized | Still correct | Proportion |")
        lines.append("| --- | --- | --- | --- |")
        for method in sorted(report.weak_irrelevance):
            weak = report.weak_irrelevance[method]
            shown = "-" if weak.proportion is None else f"{_pct(weak.proportion)}%"
            lines.append(f"| {method} | {weak.unrecognized} | {weak.weak} | {shown} |")
        lines.append("")

    lines.append("## Configuration")
    lines.append("")
    lines.append("| Key | Value |")
    lines.append("| --- | --- |")
    for key in sorted(report.config_echo):
        lines.append(f"| {key} | {report.config_echo[key]} |")
    lines.append("")
    return "\n".join(lines)


def _render_csv(report: MetricsReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["section", "name", "dataset", "value"])
    for method in sorted(report.accuracy):
        for dataset in report.datasets():
            value = report.accuracy[method].get(dataset)
            if value is not None:
                writer.writerow(["accuracy", method, dataset, _pct(value)])
    if report.identification_rate is not None:
        writer.writerow(["identification_rate", "", "", _pct(report.identification_rate)])
    if report.recognition_breakdown is not None:
        for name, value in report.recognition_breakdown.as_rows():
            writer.writerow(["recognition_breakdown", name, "", f"{value:.3f}"])
    if report.error_attribution is not None:
        attribution = report.error_attribution
        writer.writerow(
            ["error_attribution", "errors_on_perturbed_only", "", attribution.errors_on_perturbed_only]
        )
        writer.writerow(
            ["error_attribution", "identified_among_errors", "", attribution.identified_among_errors]
        )
        if attribution.fraction is not None:
            writer.writerow(["error_attribution", "fraction", "", _pct(attribution.fraction)])
    if report.weak_irrelevance is not None:
        for method in sorted(report.weak_irrelevance):
            weak = report.weak_irrelevance[method]
            if weak.proportion is not None:
                writer.writerow(["weak_irrelevance", method, "", _pct(weak.proportion)])
    for key in sorted(report.config_echo):
        writer.writerow(["config", key, "", report.config_echo[key]])
    return buffer.getvalue()


def render_report(report: MetricsReport, format: ReportFormat | str = ReportFormat.MARKDOWN) -> str:
    format = ReportFormat(format)
    if format is ReportFormat.MARKDOWN:
        return _render_markdown(report)
    if format is ReportFormat.CSV:
        return _render_csv(report)
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
