"""Problem corpora: record types, JSONL ingestion, gold-answer parsing, sentence segmentation.

Gold answers are stored as exact rationals so that correctness checks never
suffer floating-point rounding. Sentence segmentation is rule-based with a
fixed abbreviation list, which keeps every downstream consumer deterministic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Iterator, Sequence, Union

if TYPE_CHECKING:
    from .perturb import PerturbedProblem

CorpusRecord = Union["ProblemRecord", "PerturbedProblem"]

ANSWER_DELIMITER = "####"

_CURRENCY_CHARS = "$£€"

# Terminator candidates: ., ?, ! followed by whitespace or end of text.
_TERMINATORS = ".?!"

# Tokens that end with a period but do not close a sentence.
ABBREVIATIONS = frozenset(
    {
        "Mr.",
        "Mrs.",
        "Ms.",
        "Dr.",
        "Prof.",
        "St.",
        "Mt.",
        "Ave.",
        "Jr.",
        "Sr.",
        "No.",
        "vs.",
        "etc.",
        "e.g.",
        "i.e.",
    }
)


class CorpusFormatError(ValueError):
    """A corpus file line is malformed or violates a corpus invariant."""


class GoldAnswerError(ValueError):
    """An answer field carries no parseable number."""


class SourceTag(str, Enum):
    CLEAN = "clean"
    GSMIC_STYLE = "gsmic_style"
    OTHER = "other"


class CorpusFormat(str, Enum):
    JSONL_GSM8K = "jsonl_gsm8k"
    JSONL_GSMIR = "jsonl_gsmir"


@dataclass(frozen=True)
class ProblemRecord:
    """One clean math word problem with an exact gold answer.

    ``gold_rationale`` preserves any worked solution found in the source file;
    it is carried verbatim and never interpreted.
    """

    id: str
    question: str
    gold_answer: Fraction
    gold_rationale: str | None = None
    source_tag: SourceTag = SourceTag.CLEAN

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("record id must be non-empty")
        if not self.question.strip():
            raise ValueError(f"record {self.id!r}: question is empty")
        if not isinstance(self.gold_answer, Fraction):
            object.__setattr__(self, "gold_answer", Fraction(self.gold_answer))


@dataclass(frozen=True)
class SentenceSpan:
    """A half-open character span [start, end) of one sentence within a question."""

    start: int
    end: int
    text: str

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span bounds [{self.start}, {self.end})")


@dataclass(frozen=True)
class Corpus:
    """An ordered, duplicate-free sequence of problem records."""

    records: tuple[CorpusRecord, ...]
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        seen: dict[str, int] = {}
        for position, record in enumerate(self.records):
            if record.id in seen:
                raise CorpusFormatError(
                    f"corpus {self.name!r}: duplicate id {record.id!r} "
                    f"at positions {seen[record.id]} and {position}"
                )
            seen[record.id] = position

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[CorpusRecord]:
        return iter(self.records)

    def __getitem__(self, index: int) -> CorpusRecord:
        return self.records[index]

    def by_id(self, record_id: str) -> CorpusRecord:
        for record in self.records:
            if record.id == record_id:
                return record
        raise KeyError(record_id)


def parse_gold_answer(raw_answer_field: str) -> Fraction:
    """Parse the final numeric answer out of a source answer field.

    Any rationale prefix terminated by ``####`` is stripped, as are commas,
    currency symbols, and a trailing percent sign or period. Raises
    :class:`GoldAnswerError` when no number remains.
    """
    if raw_answer_field is None or not raw_answer_field.strip():
        raise GoldAnswerError("empty answer field")
    text = raw_answer_field
    if ANSWER_DELIMITER in text:
        text = text.rsplit(ANSWER_DELIMITER, 1)[1]
    text = text.strip()
    for symbol in _CURRENCY_CHARS:
        text = text.replace(symbol, "")
    text = text.replace(",", "").rstrip("%").rstrip(".").strip()
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise GoldAnswerError(
            f"no parseable number in answer field {raw_answer_field!r}"
        ) from exc


def format_gold_answer(value: Fraction) -> str:
    """Render a gold answer the way :func:`parse_gold_answer` reads it back."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def split_gold_field(raw_answer_field: str) -> tuple[str | None, Fraction]:
    """Split a source answer field into (rationale or None, final answer)."""
    rationale: str | None = None
    if ANSWER_DELIMITER in raw_answer_field:
        prefix = raw_answer_field.rsplit(ANSWER_DELIMITER, 1)[0].strip()
        rationale = prefix or None
    return rationale, parse_gold_answer(raw_answer_field)


def _is_sentence_boundary(text: str, index: int) -> bool:
    char = text[index]
    if char not in _TERMINATORS:
        return False
    if index + 1 < len(text) and not text[index + 1].isspace():
        return False
    if char == ".":
        word_start = index
        while word_start > 0 and not text[word_start - 1].isspace():
            word_start -= 1
        if text[word_start : index + 1] in ABBREVIATIONS:
            return False
    return True


def split_sentences(question: str) -> list[SentenceSpan]:
    """Split a question into sentence spans at ``.``, ``?``, ``!`` boundaries.

    A terminator only closes a sentence when followed by whitespace or end of
    text, and never when it completes a listed abbreviation. Span text is an
    exact slice of the input: every character outside the returned spans is
    whitespace, so joining spans with the original inter-span whitespace
    reconstructs the question byte for byte.
    """
    spans: list[SentenceSpan] = []
    length = len(question)
    cursor = 0
    while cursor < length:
        while cursor < length and question[cursor].isspace():
            cursor += 1
        if cursor >= length:
            break
        end = cursor
        boundary = -1
        while end < length:
            if _is_sentence_boundary(question, end):
                boundary = end
                break
            end += 1
        if boundary >= 0:
            span_end = boundary + 1
        else:
            span_end = length
            while span_end > cursor and question[span_end - 1].isspace():
                span_end -= 1
        spans.append(
            SentenceSpan(start=cursor, end=span_end, text=question[cursor:span_end])
        )
        cursor = span_end
    return spans


def _require_fields(
    payload: dict, fields: Sequence[str], line_no: int, source: str
) -> None:
    for name in fields:
        if name not in payload:
            raise CorpusFormatError(f"{source} line {line_no}: missing field {name!r}")


def _parse_gsm8k_record(payload: dict, line_no: int, source: str) -> ProblemRecord:
    _require_fields(payload, ("id", "question", "answer"), line_no, source)
    try:
        rationale, answer = split_gold_field(str(payload["answer"]))
    except GoldAnswerError as exc:
        raise CorpusFormatError(f"{source} line {line_no}: field 'answer': {exc}") from exc
    try:
        return ProblemRecord(
            id=str(payload["id"]),
            question=str(payload["question"]),
            gold_answer=answer,
            gold_rationale=rationale,
            source_tag=SourceTag.CLEAN,
        )
    except ValueError as exc:
        raise CorpusFormatError(f"{source} line {line_no}: {exc}") from exc


def _parse_gsmir_record(payload: dict, line_no: int, source: str) -> "PerturbedProblem":
    from .perturb import PerturbedProblem, TemplateKind

    _require_fields(
        payload,
        (
            "id",
            "original_question",
            "question",
            "distractor",
            "insertion_index",
            "template_kind",
            "answer",
        ),
        line_no,
        source,
    )
    try:
        rationale, answer = split_gold_field(str(payload["answer"]))
    except GoldAnswerError as exc:
        raise CorpusFormatError(f"{source} line {line_no}: field 'answer': {exc}") from exc
    try:
        kind = TemplateKind(payload["template_kind"])
    except ValueError as exc:
        raise CorpusFormatError(
            f"{source} line {line_no}: field 'template_kind': {payload['template_kind']!r}"
        ) from exc
    try:
        base = ProblemRecord(
            id=str(payload["id"]),
            question=str(payload["original_question"]),
            gold_answer=answer,
            gold_rationale=rationale,
            source_tag=SourceTag.CLEAN,
        )
        return PerturbedProblem(
            base=base,
            question=str(payload["question"]),
            distractor_sentence=str(payload["distractor"]),
            insertion_index=int(payload["insertion_index"]),
            template_kind=kind,
            role_used=str(payload.get("role", "")),
        )
    except (TypeError, ValueError) as exc:
        raise CorpusFormatError(f"{source} line {line_no}: {exc}") from exc


def load_corpus(path: str | Path, format: CorpusFormat) -> Corpus:
    """Load a JSONL corpus file, preserving line order.

    Raises :class:`CorpusFormatError` naming the line number for any malformed
    line, and naming both lines for a duplicate id.
    """
    path = Path(path)
    format = CorpusFormat(format)
    records: list[CorpusRecord] = []
    line_by_id: dict[str, int] = {}
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                raise CorpusFormatError(f"{path.name} line {line_no}: blank line")
            try:
                payload = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(
                    f"{path.name} line {line_no}: invalid JSON ({exc.msg})"
                ) from exc
            if not isinstance(payload, dict):
                raise CorpusFormatError(
                    f"{path.name} line {line_no}: record must be a JSON object"
                )
            if format is CorpusFormat.JSONL_GSM8K:
                record: CorpusRecord = _parse_gsm8k_record(payload, line_no, path.name)
            else:
                record = _parse_gsmir_record(payload, line_no, path.name)
            if record.id in line_by_id:
                raise CorpusFormatError(
                    f"{path.name}: duplicate id {record.id!r} at lines "
                    f"{line_by_id[record.id]} and {line_no}"
                )
            line_by_id[record.id] = line_no
            records.append(record)
    return Corpus(records=tuple(records), name=path.stem)


def _render_answer_field(record: CorpusRecord) -> str:
    rationale = record.gold_rationale
    answer = format_gold_answer(record.gold_answer)
    if rationale:
        return f"{rationale}\n{ANSWER_DELIMITER} {answer}"
    return answer


def _record_payload(record: CorpusRecord, format: CorpusFormat) -> dict:
    from .perturb import PerturbedProblem

    if format is CorpusFormat.JSONL_GSM8K:
        question = record.base.question if isinstance(record, PerturbedProblem) else record.question
        return {
            "id": record.id,
            "question": question,
            "answer": _render_answer_field(record),
        }
    if not isinstance(record, PerturbedProblem):
        raise CorpusFormatError(
            f"record {record.id!r} carries no distractor; cannot serialize as gsmir"
        )
    return {
        "id": record.id,
        "original_question": record.base.question,
        "question": record.question,
        "distractor": record.distractor_sentence,
        "insertion_index": record.insertion_index,
        "template_kind": record.template_kind.value if record.template_kind else "opinion",
        "answer": _render_answer_field(record),
    }


def save_corpus(corpus: Corpus, path: str | Path, format: CorpusFormat) -> Path:
    """Write a corpus as JSONL (UTF-8, LF line endings), one record per line."""
    path = Path(path)
    format = CorpusFormat(format)
    lines = [
        json.dumps(_record_payload(record, format), ensure_ascii=False)
        for record in corpus.records
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8", newline="\n")
    return path


_WHITESPACE_RE = re.compile(r"\s+")


def normalize_whitespace(text: str) -> str:
    """Collapse runs of whitespace to single spaces and trim the ends."""
    return _WHITESPACE_RE.sub(" ", text).strip()
