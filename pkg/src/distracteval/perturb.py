"""Distractor generation: templates, role extraction, insertion, and relocation.

A distractor is a single sentence that shares the question's theme but must
not help solve it. Four template kinds are supported: three numeric flavors
(ratio, integer, percentage) and an opinion flavor carrying a subjective
judgment marker. All generation is a pure function of its inputs and an
explicit rng seed.
"""

from __future__ import annotations

import json
import math
import random
import re
import zlib
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .corpus import ProblemRecord, split_sentences
from .extraction import iter_number_values

ROLE_SLOT = "[ROLE]"
NUMERIC_SLOT = "[NUMERIC_CONTENT]"

# Subjective judgment markers; every opinion template must contain one.
OPINION_MARKERS = ("insists", "believes", "thinks", "feels", "claims", "reckons")

# Relation nouns for templates that talk about someone tied to the role.
RELATION_NOUNS = ("brother", "sister", "cousin", "classmate", "teacher", "neighbor")

# Used when a question names nobody; chosen by a stable hash of the question.
FALLBACK_ROLES = ("the teacher", "the shopkeeper", "the neighbor")

_SLOT_RE = re.compile(r"\[[A-Z_]+\]")

_CAPITALIZED_RUN_RE = re.compile(r"\b[A-Z][a-z]+(?:\s+[A-Z][a-z]+)*\b")

_MAX_FILL_ATTEMPTS = 1000

_ROLE_STOPWORDS = frozenset(
    """
    The A An It He She They We You His Her Its Their Our Your This That These
    Those There Here If When While After Before Then Now Today Yesterday
    Tomorrow However Also Finally First Second Third Next Last Later Meanwhile
    Suppose Assume Given How What Why Who Whose Which Where Each Every Some Any
    All Both Half One Two Three Four Five Six Seven Eight Nine Ten Eleven
    Twelve Twenty Thirty Forty Fifty Hundred Thousand Monday Tuesday Wednesday
    Thursday Friday Saturday Sunday January February March April May June July
    August September October November December Mr Mrs Ms Dr Prof At In On By
    For With From To Of And Or But So Because Since Until Once Twice Together
    Altogether Overall Thus Therefore Hence Let Question Answer During About
    """.split()
)


class TemplateError(ValueError):
    """A distractor template is malformed or cannot be filled."""


class InsertionIndexError(IndexError):
    """An insertion index falls outside the valid sentence positions."""


class CorruptionError(ValueError):
    """A perturbed problem's stored text does not embed its distractor as recorded."""


class DistractorGuardError(ValueError):
    """A distractor sentence states the gold answer as a standalone number."""


class TemplateKind(str, Enum):
    NUMERIC_RATIO = "numeric_ratio"
    NUMERIC_INTEGER = "numeric_integer"
    NUMERIC_PERCENTAGE = "numeric_percentage"
    OPINION = "opinion"


_DEFAULT_SLOT_DESCRIPTIONS = {
    ROLE_SLOT: "name of a participant drawn from the question",
    NUMERIC_SLOT: "sampled numeric phrase rendered per template kind",
}

_SENTENCE_TERMINATORS = (".", "?", "!")


@dataclass(frozen=True)
class DistractorTemplate:
    """A sentence pattern with [ROLE] and [NUMERIC_CONTENT] slots."""

    kind: TemplateKind
    pattern: str
    slot_descriptions: dict[str, str] = field(
        default_factory=lambda: dict(_DEFAULT_SLOT_DESCRIPTIONS)
    )

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", TemplateKind(self.kind))
        for slot in self.slot_descriptions:
            occurrences = self.pattern.count(slot)
            if occurrences != 1:
                raise TemplateError(
                    f"pattern must contain slot {slot} exactly once, found {occurrences}: "
                    f"{self.pattern!r}"
                )
        if not self.pattern.rstrip().endswith(_SENTENCE_TERMINATORS):
            raise TemplateError(f"pattern must end with a sentence terminator: {self.pattern!r}")
        if self.kind is TemplateKind.OPINION and not any(
            marker in self.pattern for marker in OPINION_MARKERS
        ):
            raise TemplateError(
                f"opinion pattern must contain a subjective marker {OPINION_MARKERS}: "
                f"{self.pattern!r}"
            )


def _contains_gold_token(text: str, gold: Fraction) -> bool:
    return any(value == gold for _token, value in iter_number_values(text, percent_as_fraction=True))


@dataclass(frozen=True)
class PerturbedProblem:
    """A problem record plus one inserted distractor sentence.

    ``question`` is the perturbed text; removing the distractor sentence and
    its joining space at ``insertion_index`` reproduces ``base.question`` byte
    for byte (checked by :func:`strip_distractor`).
    """

    base: ProblemRecord
    question: str
    distractor_sentence: str
    insertion_index: int
    template_kind: TemplateKind | None = None
    role_used: str = ""

    def __post_init__(self) -> None:
        if not self.distractor_sentence.strip():
            raise ValueError(f"problem {self.base.id!r}: distractor sentence is empty")
        if self.insertion_index < 0:
            raise InsertionIndexError(f"insertion index {self.insertion_index} is negative")
        if _contains_gold_token(self.distractor_sentence, self.base.gold_answer):
            raise DistractorGuardError(
                f"problem {self.base.id!r}: distractor states the gold answer "
                f"{self.base.gold_answer} as a standalone number: {self.distractor_sentence!r}"
            )

    @property
    def id(self) -> str:
        return self.base.id

    @property
    def gold_answer(self) -> Fraction:
        return self.base.gold_answer

    @property
    def gold_rationale(self) -> str | None:
        return self.base.gold_rationale


BUILTIN_TEMPLATES: tuple[DistractorTemplate, ...] = (
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_RATIO,
        pattern=f"Last year, {ROLE_SLOT}'s neighbor handled {NUMERIC_SLOT} as many items in a single week.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_RATIO,
        pattern=f"A local report mentioned that {ROLE_SLOT} once watched a rival manage {NUMERIC_SLOT} that amount in a busy season.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_INTEGER,
        pattern=f"{ROLE_SLOT}'s cousin collected {NUMERIC_SLOT} stamps last summer.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_INTEGER,
        pattern=f"A nearby shop once displayed {NUMERIC_SLOT} similar items in its window, according to {ROLE_SLOT}.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_INTEGER,
        pattern=f"{ROLE_SLOT} remembered reading about a contest where {NUMERIC_SLOT} participants signed up.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_PERCENTAGE,
        pattern=f"A survey {ROLE_SLOT} read claimed that {NUMERIC_SLOT} of people enjoy puzzles like this one.",
    ),
    DistractorTemplate(
        kind=TemplateKind.NUMERIC_PERCENTAGE,
        pattern=f"{ROLE_SLOT}'s classmate mentioned that {NUMERIC_SLOT} of the school voted for a longer recess.",
    ),
    DistractorTemplate(
        kind=TemplateKind.OPINION,
        pattern=f"However, {ROLE_SLOT} insists that selling an average of {NUMERIC_SLOT} shirts per day is the best way to maximise profit.",
    ),
    DistractorTemplate(
        kind=TemplateKind.OPINION,
        pattern=f"{ROLE_SLOT}'s brother believes that {NUMERIC_SLOT} is a luckier number for games like this.",
    ),
    DistractorTemplate(
        kind=TemplateKind.OPINION,
        pattern=f"{ROLE_SLOT} thinks that finishing {NUMERIC_SLOT} tasks before lunch feels more productive.",
    ),
)


def load_templates(path: str | Path) -> list[DistractorTemplate]:
    """Load templates from a JSONL file of {"kind": str, "pattern": str} rows."""
    path = Path(path)
    templates: list[DistractorTemplate] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                payload = json.loads(line)
                templates.append(
                    DistractorTemplate(kind=TemplateKind(payload["kind"]), pattern=payload["pattern"])
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise TemplateError(f"{path.name} line {line_no}: {exc}") from exc
    return templates


def extract_roles(question: str) -> list[str]:
    """Extract candidate role names from a question.

    Heuristic: capitalized token runs, minus a fixed stopword list, in order
    of first occurrence (so names in the opening sentence come first). When
    nothing qualifies, a generic fallback role is chosen from a fixed list by
    a stable hash of the question text.
    """
    roles: list[str] = []
    seen: set[str] = set()
    for match in _CAPITALIZED_RUN_RE.finditer(question):
        tokens = [token for token in match.group(0).split() if token not in _ROLE_STOPWORDS]
        if not tokens:
            continue
        candidate = " ".join(tokens)
        if candidate not in seen:
            seen.add(candidate)
            roles.append(candidate)
    if roles:
        return roles
    fallback = FALLBACK_ROLES[zlib.crc32(question.encode("utf-8")) % len(FALLBACK_ROLES)]
    return [fallback]


def _numeric_band(numbers: Sequence[Fraction]) -> tuple[int, int]:
    anchors = [abs(Fraction(n)) for n in numbers if n != 0]
    if not anchors:
        return 1, 100
    low = max(1, math.floor(min(anchors) / 10))
    high = max(math.ceil(max(anchors) * 10), low + 9)
    return low, high


def _render_numeric(kind: TemplateKind, value: int) -> str:
    if kind is TemplateKind.NUMERIC_RATIO:
        return f"{value} times"
    if kind is TemplateKind.NUMERIC_PERCENTAGE:
        return f"{value}%"
    return str(value)


def fill_template(
    template: DistractorTemplate,
    role: str,
    numbers_in_question: Sequence[Fraction],
    rng_seed: int,
    *,
    gold_answer: Fraction | None = None,
) -> str:
    """Fill a template's slots into a complete distractor sentence.

    The numeric value is sampled deterministically from ``rng_seed`` within a
    band anchored to the question's own numbers (a tenth of the smallest up to
    ten times the largest). Samples that would state ``gold_answer`` as a
    standalone number are rerolled.
    """
    if not role or not role.strip():
        raise TemplateError("role must be non-empty")
    rng = random.Random(rng_seed)
    low, high = _numeric_band(numbers_in_question)
    for _attempt in range(_MAX_FILL_ATTEMPTS):
        value = rng.randint(low, high)
        if gold_answer is not None and Fraction(value) == gold_answer:
            continue
        text = template.pattern.replace(ROLE_SLOT, role).replace(
            NUMERIC_SLOT, _render_numeric(template.kind, value)
        )
        unfilled = _SLOT_RE.search(text)
        if unfilled:
            raise TemplateError(f"unfilled slot {unfilled.group(0)} after substitution")
        if gold_answer is not None and _contains_gold_token(text, gold_answer):
            continue
        return text
    raise TemplateError(
        f"could not sample a distractor avoiding gold answer {gold_answer} "
        f"within {_MAX_FILL_ATTEMPTS} attempts"
    )


def _render_insertion(base_question: str, sentence: str, insertion_index: int) -> str:
    spans = split_sentences(base_question)
    count = len(spans)
    if not 0 <= insertion_index <= count:
        raise InsertionIndexError(
            f"insertion index {insertion_index} out of range for {count} sentences"
        )
    if insertion_index == 0:
        return f"{sentence} {base_question}"
    cut = spans[insertion_index - 1].end
    return f"{base_question[:cut]} {sentence}{base_question[cut:]}"


def insert_distractor(
    problem: ProblemRecord,
    sentence: str,
    insertion_index: int,
    *,
    template_kind: TemplateKind | None = None,
    role_used: str = "",
) -> PerturbedProblem:
    """Insert a distractor sentence at a sentence position (0 = before everything).

    Joining uses a single space, so stripping the sentence and its join
    restores the original question byte for byte.
    """
    question = _render_insertion(problem.question, sentence, insertion_index)
    return PerturbedProblem(
        base=problem,
        question=question,
        distractor_sentence=sentence,
        insertion_index=insertion_index,
        template_kind=template_kind,
        role_used=role_used,
    )


def strip_distractor(perturbed: PerturbedProblem) -> ProblemRecord:
    """Remove the recorded distractor, recovering the original problem record.

    Raises :class:`CorruptionError` when the stored question does not equal
    the base question with the distractor inserted at the recorded index.
    """
    try:
        expected = _render_insertion(
            perturbed.base.question, perturbed.distractor_sentence, perturbed.insertion_index
        )
    except InsertionIndexError as exc:
        raise CorruptionError(f"problem {perturbed.id!r}: {exc}") from exc
    if expected != perturbed.question:
        raise CorruptionError(
            f"problem {perturbed.id!r}: distractor not found at sentence index "
            f"{perturbed.insertion_index}"
        )
    return perturbed.base


def shuffle_distractor_position(perturbed: PerturbedProblem, rng_seed: int) -> PerturbedProblem:
    """Relocate the distractor to a uniformly sampled sentence position.

    The new position may equal the old one; the result is deterministic per
    seed and satisfies every PerturbedProblem invariant.
    """
    rng = random.Random(rng_seed)
    count = len(split_sentences(perturbed.base.question))
    new_index = rng.randint(0, count)
    return insert_distractor(
        perturbed.base,
        perturbed.distractor_sentence,
        new_index,
        template_kind=perturbed.template_kind,
        role_used=perturbed.role_used,
    )


def recover_insertion(question: str, distractor: str) -> tuple[str, int]:
    """Invert a single-space insertion: return (base question, insertion index).

    Raises :class:`CorruptionError` when the distractor does not occur in the
    question with single-space joins at any valid sentence position.
    """
    start = question.find(distractor)
    while start >= 0:
        if start == 0:
            base = question[len(distractor) + 1 :] if question[len(distractor) : len(distractor) + 1] == " " else None
        elif question[start - 1] == " ":
            base = question[: start - 1] + question[start + len(distractor) :]
        else:
            base = None
        if base:
            for index in range(len(split_sentences(base)) + 1):
                if _render_insertion(base, distractor, index) == question:
                    return base, index
        start = question.find(distractor, start + 1)
    raise CorruptionError(f"distractor {distractor!r} not cleanly embedded in question")


def perturb_problem(
    problem: ProblemRecord,
    template: DistractorTemplate,
    rng_seed: int,
    insertion_index: int = 0,
) -> PerturbedProblem:
    """Fill a template against a problem and insert the result.

    The role is the first extracted role; numeric slots are anchored to the
    numbers already present in the question and never state the gold answer.
    """
    role = extract_roles(problem.question)[0]
    numbers = [value for _token, value in iter_number_values(problem.question)]
    sentence = fill_template(
        template, role, numbers, rng_seed, gold_answer=problem.gold_answer
    )
    return insert_distractor(
        problem, sentence, insertion_index, template_kind=template.kind, role_used=role
    )
