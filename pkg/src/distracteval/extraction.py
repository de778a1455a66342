"""Completion parsing: final answers, identification verdicts, filtration output.

Every function here is pure and total unless its docstring says otherwise;
:func:`extract_final_answer` in particular never raises, because a completion
that yields no answer is a legitimate (incorrect) outcome, not a crash.
"""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Iterator

ANSWER_SENTINEL = "the answer is"
NO_IRRELEVANT_PHRASE = "no irrelevant information"
FILTRATION_MARKER = "Processed Context:"

_SENTINEL_RE = re.compile(re.escape(ANSWER_SENTINEL), re.IGNORECASE)
_FILTRATION_MARKER_RE = re.compile(r"processed context\s*:", re.IGNORECASE)

# A standalone number token: optional sign and currency symbol, digits with
# optional thousands commas, optional decimal part, optional trailing percent
# sign or /denominator. Lookarounds reject tokens glued to words, decimals, or
# comma groups so "1,200" never also yields "200".
_NUMBER_TOKEN_RE = re.compile(
    r"(?<![\w.,])[-+]?[$£€]?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?(?:%|/\d+)?(?!\w|\.\d)"
)

_NON_ALNUM_RE = re.compile(r"[^0-9a-z]+")


class ExtractionMethod(str, Enum):
    SENTINEL = "sentinel"
    LAST_NUMBER = "last_number"
    NONE = "none"


class IdentificationCategory(str, Enum):
    IRRELEVANT_CORRECT = "irrelevant_correct"
    OTHER_INFORMATION = "other_information"
    NO_IRRELEVANT = "no_irrelevant"


class FiltrationParseError(ValueError):
    """A filtration completion carries no usable processed context."""


@dataclass(frozen=True)
class ExtractedAnswer:
    """A parsed final answer; ``value`` is absent iff nothing was extracted."""

    value: Fraction | None
    method_of_extraction: ExtractionMethod
    raw_tail: str

    def __post_init__(self) -> None:
        if (self.value is None) != (self.method_of_extraction is ExtractionMethod.NONE):
            raise ValueError("value must be absent exactly when extraction method is 'none'")


@dataclass(frozen=True)
class IdentificationVerdict:
    """Outcome of matching a claimed irrelevant span against the true distractor."""

    category: IdentificationCategory
    matched_score: float
    claimed_span: str | None

    def __post_init__(self) -> None:
        if not 0.0 <= self.matched_score <= 1.0:
            raise ValueError(f"matched_score {self.matched_score} outside [0, 1]")


def parse_number_token(token: str, *, percent_as_fraction: bool = False) -> Fraction | None:
    """Parse one matched number token to an exact rational.

    ``percent_as_fraction`` maps "25%" to 1/4; the default keeps 25, matching
    how plain-number gold answers are scored. Returns None for degenerate
    tokens such as a zero denominator.
    """
    text = token.strip()
    negative = text.startswith("-")
    text = text.lstrip("+-")
    for symbol in "$£€":
        text = text.replace(symbol, "")
    text = text.replace(",", "")
    percent = text.endswith("%")
    text = text.rstrip("%")
    try:
        if "/" in text:
            numerator, denominator = text.split("/", 1)
            value = Fraction(int(numerator), int(denominator))
        else:
            value = Fraction(text)
    except (ValueError, ZeroDivisionError):
        return None
    if percent and percent_as_fraction:
        value /= 100
    if negative:
        value = -value
    return value


def iter_number_values(
    text: str, *, percent_as_fraction: bool = False
) -> Iterator[tuple[str, Fraction]]:
    """Yield (token, value) for every parseable standalone number in text order."""
    for match in _NUMBER_TOKEN_RE.finditer(text):
        value = parse_number_token(match.group(0), percent_as_fraction=percent_as_fraction)
        if value is not None:
            yield match.group(0), value


def extract_final_answer(completion: str) -> ExtractedAnswer:
    """Extract a final numeric answer from a completion. Total: never raises.

    Tries the sentinel rule first (first number after the last occurrence of
    "the answer is", case-insensitive), then falls back to the last standalone
    number anywhere in the text. ``raw_tail`` holds the text after the sentinel
    for sentinel extractions and the matched token for fallback extractions.
    """
    if not isinstance(completion, str):
        completion = str(completion)
    sentinel_matches = list(_SENTINEL_RE.finditer(completion))
    if sentinel_matches:
        tail = completion[sentinel_matches[-1].end() :]
        for _token, value in iter_number_values(tail):
            return ExtractedAnswer(
                value=value,
                method_of_extraction=ExtractionMethod.SENTINEL,
                raw_tail=tail.strip(),
            )
    last: tuple[str, Fraction] | None = None
    for token, value in iter_number_values(completion):
        last = (token, value)
    if last is not None:
        return ExtractedAnswer(
            value=last[1],
            method_of_extraction=ExtractionMethod.LAST_NUMBER,
            raw_tail=last[0],
        )
    return ExtractedAnswer(value=None, method_of_extraction=ExtractionMethod.NONE, raw_tail="")


def score_answer(extracted: ExtractedAnswer, gold: Fraction) -> bool:
    """True iff a value was extracted and equals the gold answer exactly."""
    return extracted.value is not None and extracted.value == Fraction(gold)


def normalize_span_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, and collapse whitespace into a token list."""
    return [token for token in _NON_ALNUM_RE.sub(" ", text.lower()).split() if token]


def token_f1(claimed: str, truth: str) -> float:
    """Token-level F1 between two spans after normalization."""
    claimed_counts = Counter(normalize_span_tokens(claimed))
    truth_counts = Counter(normalize_span_tokens(truth))
    if not claimed_counts and not truth_counts:
        return 1.0
    if not claimed_counts or not truth_counts:
        return 0.0
    overlap = sum((claimed_counts & truth_counts).values())
    return 2 * overlap / (sum(claimed_counts.values()) + sum(truth_counts.values()))


def is_no_irrelevant_claim(text: str) -> bool:
    """True when text states the no-irrelevant-information sentinel.

    Accepted case-insensitively, ignoring punctuation, with an optional
    leading "there is".
    """
    normalized = " ".join(normalize_span_tokens(text))
    return normalized in (NO_IRRELEVANT_PHRASE, f"there is {NO_IRRELEVANT_PHRASE}")


def match_identification(
    claimed_span: str | None,
    true_distractor: str,
    no_irrelevant_claimed: bool,
    threshold: float = 0.6,
) -> IdentificationVerdict:
    """Classify an identification claim against the true distractor.

    The claim is irrelevant_correct when its token F1 against the true
    distractor reaches ``threshold``; a sentinel claim is no_irrelevant; every
    other claim (including an absent one) is other_information.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold {threshold} outside (0, 1]")
    if no_irrelevant_claimed:
        return IdentificationVerdict(
            category=IdentificationCategory.NO_IRRELEVANT,
            matched_score=0.0,
            claimed_span=claimed_span,
        )
    if claimed_span is None or not claimed_span.strip():
        return IdentificationVerdict(
            category=IdentificationCategory.OTHER_INFORMATION,
            matched_score=0.0,
            claimed_span=claimed_span,
        )
    score = token_f1(claimed_span, true_distractor)
    category = (
        IdentificationCategory.IRRELEVANT_CORRECT
        if score >= threshold
        else IdentificationCategory.OTHER_INFORMATION
    )
    return IdentificationVerdict(category=category, matched_score=score, claimed_span=claimed_span)


def parse_identification_claim(completion: str) -> tuple[str | None, bool]:
    """Split an identification completion into (claimed span, sentinel claimed).

    Takes the text after the last answer sentinel when one is present,
    otherwise the whole completion; a closing bracket left over from the
    demonstration block format is dropped.
    """
    sentinel_matches = list(_SENTINEL_RE.finditer(completion))
    tail = completion[sentinel_matches[-1].end() :] if sentinel_matches else completion
    tail = tail.strip()
    if tail.endswith("]"):
        tail = tail[:-1].rstrip()
    if is_no_irrelevant_claim(tail):
        return None, True
    if not tail:
        return None, False
    return tail, False


def parse_filtration(completion: str) -> str:
    """Return the trimmed text after the last "Processed Context:" marker.

    Raises :class:`FiltrationParseError` when the marker is absent or nothing
    follows it: an empty processed context must never reach a downstream
    method.
    """
    matches = list(_FILTRATION_MARKER_RE.finditer(completion))
    if not matches:
        raise FiltrationParseError(
            f"completion lacks the {FILTRATION_MARKER!r} marker: {completion[:80]!r}"
        )
    remainder = completion[matches[-1].end() :].strip()
    if remainder.endswith("]"):
        remainder = remainder[:-1].rstrip()
    if not remainder:
        raise FiltrationParseError("empty processed context after marker")
    return remainder
