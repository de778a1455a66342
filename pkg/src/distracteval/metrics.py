"""Run records and the metrics computed over them.

All rates are exact fractions of record counts; nothing here rounds. The
report layer owns formatting. Serialization is deterministic so replayed runs
produce byte-identical results files.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .corpus import format_gold_answer
from .extraction import (
    ExtractedAnswer,
    ExtractionMethod,
    IdentificationCategory,
    IdentificationVerdict,
)


class MetricsError(ValueError):
    """A metric was asked for inputs that cannot support it."""


@dataclass(frozen=True)
class RunRecord:
    """One problem's outcome under one method.

    ``prompts`` holds cache-key digests, not the texts; the texts live in the
    completion cache. ``identification`` is present only for perturbed
    problems under methods that probe for irrelevance.
    """

    problem_id: str
    method: str
    extracted: ExtractedAnswer | None
    correct: bool
    downstream: str | None = None
    prompts: tuple[str, ...] = ()
    completions: tuple[str, ...] = ()
    identification: IdentificationVerdict | None = None
    flags: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompts", tuple(self.prompts))
        object.__setattr__(self, "completions", tuple(self.completions))
        object.__setattr__(self, "flags", frozenset(self.flags))
        if not self.problem_id:
            raise MetricsError("problem_id must be non-empty")
        if not self.method:
            raise MetricsError("method must be non-empty")
        if self.correct and (self.extracted is None or self.extracted.value is None):
            raise MetricsError(
                f"problem {self.problem_id!r}: a correct record must carry an extracted value"
            )

    def to_dict(self) -> dict:
        extracted = None
        if self.extracted is not None:
            extracted = {
                "value": None
                if self.extracted.value is None
                else format_gold_answer(self.extracted.value),
                "method_of_extraction": self.extracted.method_of_extraction.value,
                "raw_tail": self.extracted.raw_tail,
            }
        identification = None
        if self.identification is not None:
            identification = {
                "category": self.identification.category.value,
                "matched_score": self.identification.matched_score,
                "claimed_span": self.identification.claimed_span,
            }
        return {
            "problem_id": self.problem_id,
            "method": self.method,
            "downstream": self.downstream,
            "extracted": extracted,
            "correct": self.correct,
            "identification": identification,
            "prompts": list(self.prompts),
            "completions": list(self.completions),
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "RunRecord":
        extracted = None
        raw_extracted = payload.get("extracted")
        if raw_extracted is not None:
            value = raw_extracted.get("value")
            extracted = ExtractedAnswer(
                value=None if value is None else Fraction(value),
                method_of_extraction=ExtractionMethod(raw_extracted["method_of_extraction"]),
                raw_tail=raw_extracted.get("raw_tail", ""),
            )
        identification = None
        raw_identification = payload.get("identification")
        if raw_identification is not None:
            identification = IdentificationVerdict(
                category=IdentificationCategory(raw_identification["category"]),
                matched_score=raw_identification["matched_score"],
                claimed_span=raw_identification.get("claimed_span"),
            )
        return cls(
            problem_id=payload["problem_id"],
            method=payload["method"],
            extracted=extracted,
            correct=bool(payload["correct"]),
            downstream=payload.get("downstream"),
            prompts=tuple(payload.get("prompts", ())),
            completions=tuple(payload.get("completions", ())),
            identification=identification,
            flags=frozenset(payload.get("flags", ())),
        )


@dataclass(frozen=True)
class RecognitionBreakdown:
    """How identification verdicts distribute over the three categories.

    The three proportions must sum to 1 within 1e-9.
    """

    irrelevant_correct: float
    other_information: float
    no_irrelevant: float

    def __post_init__(self) -> None:
        for name in ("irrelevant_correct", "other_information", "no_irrelevant"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise MetricsError(f"{name} proportion {value} outside [0, 1]")
        total = self.irrelevant_correct + self.other_information + self.no_irrelevant
        if abs(total - 1.0) > 1e-9:
            raise MetricsError(f"breakdown proportions sum to {total}, expected 1")

    def as_rows(self) -> tuple[tuple[str, float], ...]:
        return (
            (IdentificationCategory.IRRELEVANT_CORRECT.value, self.irrelevant_correct),
            (IdentificationCategory.OTHER_INFORMATION.value, self.other_information),
            (IdentificationCategory.NO_IRRELEVANT.value, self.no_irrelevant),
        )

    def to_dict(self) -> dict:
        return {name: value for name, value in self.as_rows()}


@dataclass(frozen=True)
class ErrorAttribution:
    """Errors introduced by perturbation, split by whether the distractor was recognized."""

    errors_on_perturbed_only: int
    identified_among_errors: int
    fraction: float | None

    def __post_init__(self) -> None:
        if self.errors_on_perturbed_only < 0 or self.identified_among_errors < 0:
            raise MetricsError("attribution counts must be non-negative")
        if self.identified_among_errors > self.errors_on_perturbed_only:
            raise MetricsError(
                f"identified errors {self.identified_among_errors} exceed "
                f"error count {self.errors_on_perturbed_only}"
            )
        if (self.fraction is None) != (self.errors_on_perturbed_only == 0):
            raise MetricsError("fraction must be None exactly when no errors qualify")

    def to_dict(self) -> dict:
        return {
            "errors_on_perturbed_only": self.errors_on_perturbed_only,
            "identified_among_errors": self.identified_among_errors,
            "fraction": self.fraction,
        }


@dataclass(frozen=True)
class WeakIrrelevance:
    """Among unrecognized distractors, how many a method still answered correctly."""

    unrecognized: int
    weak: int
    proportion: float | None

    def __post_init__(self) -> None:
        if self.unrecognized < 0 or self.weak < 0:
            raise MetricsError("weak-irrelevance counts must be non-negative")
        if self.weak > self.unrecognized:
            raise MetricsError(f"weak count {self.weak} exceeds unrecognized {self.unrecognized}")
        if (self.proportion is None) != (self.unrecognized == 0):
            raise MetricsError("proportion must be None exactly when nothing is unrecognized")

    def to_dict(self) -> dict:
        return {
            "unrecognized": self.unrecognized,
            "weak": self.weak,
            "proportion": self.proportion,
        }


@dataclass(frozen=True)
class MetricsReport:
    """A full metrics bundle: accuracy grid plus optional irrelevance metrics.

    ``accuracy`` maps method -> dataset -> accuracy in [0, 1]. ``config_echo``
    carries the run configuration (threshold, temperature, seeds) so rendered
    reports state the conditions the numbers were measured under.
    """

    accuracy: dict[str, dict[str, float]]
    config_echo: dict[str, str]
    identification_rate: float | None = None
    recognition_breakdown: RecognitionBreakdown | None = None
    error_attribution: ErrorAttribution | None = None
    weak_irrelevance: dict[str, WeakIrrelevance] | None = None

    def __post_init__(self) -> None:
        if not self.accuracy:
            raise MetricsError("report must carry at least one accuracy cell")
        for method, by_dataset in self.accuracy.items():
            if not by_dataset:
                raise MetricsError(f"method {method!r} has no dataset accuracies")
            for dataset, value in by_dataset.items():
                if not 0.0 <= value <= 1.0:
                    raise MetricsError(
                        f"accuracy {value} for {method!r} on {dataset!r} outside [0, 1]"
                    )
        if self.identification_rate is not None and not 0.0 <= self.identification_rate <= 1.0:
            raise MetricsError(f"identification rate {self.identification_rate} outside [0, 1]")

    def datasets(self) -> list[str]:
        names: list[str] = []
        for by_dataset in self.accuracy.values():
            for name in by_dataset:
                if name not in names:
                    names.append(name)
        return names

    def to_dict(self) -> dict:
        return {
            "accuracy": {m: dict(d) for m, d in self.accuracy.items()},
            "identification_rate": self.identification_rate,
            "recognition_breakdown": None
            if self.recognition_breakdown is None
            else self.recognition_breakdown.to_dict(),
            "error_attribution": None
            if self.error_attribution is None
            else self.error_attribution.to_dict(),
            "weak_irrelevance": None
            if self.weak_irrelevance is None
            else {m: w.to_dict() for m, w in sorted(self.weak_irrelevance.items())},
            "config_echo": dict(self.config_echo),
        }

    @classmethod
    def from_dict(cls, payload: Mapping) -> "MetricsReport":
        breakdown = payload.get("recognition_breakdown")
        attribution = payload.get("error_attribution")
        weak = payload.get("weak_irrelevance")
        return cls(
            accuracy={m: dict(d) for m, d in payload["accuracy"].items()},
            config_echo=dict(payload.get("config_echo", {})),
            identification_rate=payload.get("identification_rate"),
            recognition_breakdown=None
            if breakdown is None
            else RecognitionBreakdown(**breakdown),
            error_attribution=None if attribution is None else ErrorAttribution(**attribution),
            weak_irrelevance=None
            if weak is None
            else {m: WeakIrrelevance(**w) for m, w in weak.items()},
        )


def compute_accuracy(records: Sequence[RunRecord]) -> float:
    if not records:
        raise MetricsError("cannot compute accuracy over zero records")
    return sum(1 for r in records if r.correct) / len(records)


def _require_verdicts(records: Sequence[RunRecord]) -> None:
    if not records:
        raise MetricsError("cannot compute identification metrics over zero records")
    missing = [r.problem_id for r in records if r.identification is None]
    if missing:
        raise MetricsError(
            f"{len(missing)} record(s) lack identification verdicts (first: {missing[0]!r})"
        )


def compute_identification_rate(records: Sequence[RunRecord]) -> float:
    """Fraction of records whose claimed irrelevance matched the true distractor."""
    _require_verdicts(records)
    hits = sum(
        1
        for r in records
        if r.identification.category is IdentificationCategory.IRRELEVANT_CORRECT
    )
    return hits / len(records)


def compute_recognition_breakdown(records: Sequence[RunRecord]) -> RecognitionBreakdown:
    _require_verdicts(records)
    counts = {category: 0 for category in IdentificationCategory}
    for record in records:
        counts[record.identification.category] += 1
    total = len(records)
    return RecognitionBreakdown(
        irrelevant_correct=counts[IdentificationCategory.IRRELEVANT_CORRECT] / total,
        other_information=counts[IdentificationCategory.OTHER_INFORMATION] / total,
        no_irrelevant=counts[IdentificationCategory.NO_IRRELEVANT] / total,
    )


def attribute_errors(
    original_records: Sequence[RunRecord],
    perturbed_records: Sequence[RunRecord],
) -> ErrorAttribution:
    """Attribute perturbed-run errors to the inserted irrelevance.

    Qualifying errors are problems answered correctly in the original run and
    wrongly in the perturbed run. The fraction reports how many of those the
    model had nonetheless recognized as carrying irrelevant information.
    """
    original_by_id: dict[str, RunRecord] = {}
    for record in original_records:
        if record.problem_id in original_by_id:
            raise MetricsError(f"duplicate original record for {record.problem_id!r}")
        original_by_id[record.problem_id] = record
    perturbed_ids = [r.problem_id for r in perturbed_records]
    if len(set(perturbed_ids)) != len(perturbed_ids):
        raise MetricsError("duplicate perturbed records")
    if set(perturbed_ids) != set(original_by_id):
        raise MetricsError(
            "original and perturbed runs must cover the same problem ids "
            f"({len(original_by_id)} vs {len(perturbed_ids)})"
        )
    errors = [
        record
        for record in perturbed_records
        if original_by_id[record.problem_id].correct and not record.correct
    ]
    identified = sum(
        1
        for record in errors
        if record.identification is not None
        and record.identification.category is IdentificationCategory.IRRELEVANT_CORRECT
    )
    fraction = identified / len(errors) if errors else None
    return ErrorAttribution(
        errors_on_perturbed_only=len(errors),
        identified_among_errors=identified,
        fraction=fraction,
    )


def weak_irrelevance_analysis(
    unrecognized_records: Sequence[RunRecord],
    downstream_results_per_method: Mapping[str, Sequence[RunRecord]],
) -> dict[str, WeakIrrelevance]:
    """For each method, measure how often unrecognized distractors were harmless.

    ``unrecognized_records`` are perturbed-run records whose distractor went
    unrecognized; a distractor counts as weak for a method when that method
    still answered the problem correctly.
    """
    unrecognized_ids = {r.problem_id for r in unrecognized_records}
    if len(unrecognized_ids) != len(unrecognized_records):
        raise MetricsError("duplicate unrecognized records")
    result: dict[str, WeakIrrelevance] = {}
    for method, records in downstream_results_per_method.items():
        by_id = {r.problem_id: r for r in records}
        missing = unrecognized_ids - set(by_id)
        if missing:
            raise MetricsError(
                f"method {method!r} results lack {len(missing)} unrecognized problem(s) "
                f"(first: {sorted(missing)[0]!r})"
            )
        weak = sum(1 for pid in unrecognized_ids if by_id[pid].correct)
        count = len(unrecognized_ids)
        result[method] = WeakIrrelevance(
            unrecognized=count,
            weak=weak,
            proportion=weak / count if count else None,
        )
    return result


def summarize_records(
    records: Sequence[RunRecord],
    *,
    dataset_name: str,
    config_echo: Mapping[str, str],
) -> MetricsReport:
    """Build a report from raw records: per-method accuracy, plus
    identification metrics when every record carries a verdict."""
    if not records:
        raise MetricsError("cannot summarize zero records")
    by_method: dict[str, list[RunRecord]] = {}
    for record in records:
        by_method.setdefault(record.method, []).append(record)
    accuracy = {
        method: {dataset_name: compute_accuracy(group)}
        for method, group in sorted(by_method.items())
    }
    identification_rate = None
    breakdown = None
    if all(r.identification is not None for r in records):
        identification_rate = compute_identification_rate(records)
        breakdown = compute_recognition_breakdown(records)
    return MetricsReport(
        accuracy=accuracy,
        config_echo=dict(config_echo),
        identification_rate=identification_rate,
        recognition_breakdown=breakdown,
    )
