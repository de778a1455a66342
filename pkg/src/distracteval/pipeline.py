"""Analyze-then-filter pipeline.

Stage one (analysis) asks the model to dissect the question clause by clause
and name the irrelevant part after a fixed answer marker. Stage two
(filtration) asks it to rewrite the question without that part, echoing the
cleaned text after "Processed Context:". When analysis finds nothing
irrelevant, filtration is skipped entirely: zero model calls, question passes
through unchanged. Any filtration failure falls back to the unfiltered
question and flags the record instead of crashing the run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

from .corpus import ProblemRecord, normalize_whitespace
from .extraction import (
    FILTRATION_MARKER,
    NO_IRRELEVANT_PHRASE,
    ExtractedAnswer,
    FiltrationParseError,
    extract_final_answer,
    is_no_irrelevant_claim,
    parse_filtration,
)
from .gateway import Backend, Completion, FinishReason, PromptBundle
from .perturb import PerturbedProblem
from .prompts import (
    DEFAULT_IP_INSTRUCTION,
    DemoSet,
    MethodKind,
    PromptError,
    _bundle,
    build_few_shot_prompt,
    build_zero_cot_prompts,
)

ANALYSIS_ANSWER_MARKER = "Finally, the answer is"

FILTRATION_INSTRUCTION = (
    "If there is irrelevant information, please exclude it and output the context "
    "after excluding the irrelevant information. If there is no irrelevant "
    "information, please directly output the context."
)

FLAG_PARSE_ERROR = "parse_error"
FLAG_FILTRATION_FAILED = "filtration_failed"
FLAG_TRUNCATED = "truncated"

_VERDICT_RE = re.compile(r"[Cc]lause \((\d+)\) is (relevant|irrelevant) because\s+([^;\n]+)")
_CLAUSE_MARKER_RE = re.compile(r"\((\d+)\)")
_FILTRATION_MARKER_RE = re.compile(r"processed context\s*:", re.IGNORECASE)
_ANALYSIS_MARKER_RE = re.compile(re.escape(ANALYSIS_ANSWER_MARKER), re.IGNORECASE)
_CLAUSES_HEADING_RE = re.compile(r"clauses are\s*:", re.IGNORECASE)


class AnalysisParseError(ValueError):
    """An analysis completion carries no recognizable answer marker."""


class GenerationError(RuntimeError):
    """Guided demo generation produced an output that fails its stage's checks."""

    def __init__(self, stage: str, raw: str, reason: str) -> None:
        super().__init__(f"demo generation failed at stage {stage!r}: {reason}")
        self.stage = stage
        self.raw = raw


@dataclass(frozen=True)
class AnalysisDemo:
    """One worked analysis example rendered into the bracketed demo grammar."""

    question: str
    analysis_rationale: str
    identified_answer: str

    def __post_init__(self) -> None:
        for name in ("question", "analysis_rationale", "identified_answer"):
            if not getattr(self, name).strip():
                raise ValueError(f"analysis demo field {name} must be non-empty")

    def render(self) -> str:
        return (
            f"[Q: {self.question}, A: Because {self.analysis_rationale}, "
            f"{ANALYSIS_ANSWER_MARKER} {self.identified_answer}]"
        )


@dataclass(frozen=True)
class ClauseVerdict:
    clause_index: int
    label: str
    reason: str

    def __post_init__(self) -> None:
        if self.label not in ("relevant", "irrelevant"):
            raise ValueError(f"verdict label must be relevant or irrelevant, got {self.label!r}")
        if self.clause_index < 1:
            raise ValueError(f"clause index {self.clause_index} must be >= 1")


@dataclass(frozen=True)
class AnalysisOutcome:
    """Parsed analysis stage: clause dissection plus the identified span.

    ``identified_span`` is None when the model declared the question clean.
    Clause and verdict parsing is best-effort diagnostics; the span is the
    part the rest of the pipeline depends on.
    """

    identified_span: str | None
    raw_completion: str
    clauses: tuple[str, ...] = ()
    verdicts: tuple[ClauseVerdict, ...] = ()


@dataclass(frozen=True)
class FiltrationOutcome:
    processed_context: str
    removed_any: bool
    raw_completion: str


@dataclass(frozen=True)
class AtfResult:
    """Everything one pipeline run produced, stage by stage.

    ``prompts`` and ``completions`` are positionally aligned in call order:
    analysis, then filtration when it ran, then the downstream stage(s).
    """

    analysis: AnalysisOutcome | None
    filtration: FiltrationOutcome
    extracted: ExtractedAnswer
    prompts: tuple[PromptBundle, ...]
    completions: tuple[str, ...]
    flags: frozenset[str] = field(default_factory=frozenset)

    @property
    def processed_question(self) -> str:
        return self.filtration.processed_context


def build_analysis_prompt(
    question: str,
    demos: Sequence[AnalysisDemo],
    *,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Render analysis demos plus the bare test question awaiting its analysis."""
    if not demos:
        raise PromptError("analysis prompt needs at least one demo")
    lines = [demo.render() for demo in demos]
    lines.append(f"Q: {question}, A:")
    return _bundle(
        "\n".join(lines),
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


def _parse_clauses(text: str) -> tuple[str, ...]:
    heading = None
    for heading in _CLAUSES_HEADING_RE.finditer(text):
        pass
    if heading is None:
        return ()
    segment = text[heading.end() :]
    stop = re.search(r"[Cc]lause \(|Finally,", segment)
    if stop:
        segment = segment[: stop.start()]
    clauses = []
    for piece in segment.split(";"):
        piece = _CLAUSE_MARKER_RE.sub("", piece, count=1).strip().strip(".").strip()
        if piece:
            clauses.append(piece)
    return tuple(clauses)


def parse_analysis_completion(question: str, text: str) -> AnalysisOutcome:
    """Parse an analysis completion into its outcome.

    The identified span is whatever follows the last answer marker, with one
    trailing demo bracket removed; the no-irrelevant sentinel maps to None.
    Clause lists and per-clause verdicts are parsed opportunistically and
    dropped when they disagree with each other.
    """
    last = None
    for last in _ANALYSIS_MARKER_RE.finditer(text):
        pass
    if last is None:
        raise AnalysisParseError(
            f"analysis completion has no {ANALYSIS_ANSWER_MARKER!r} marker: {text[:120]!r}"
        )
    tail = text[last.end() :].strip()
    if tail.endswith("]"):
        tail = tail[:-1].rstrip()
    if not tail:
        raise AnalysisParseError("analysis completion has an empty identified answer")
    identified: str | None = tail
    if is_no_irrelevant_claim(tail):
        identified = None

    head = text[: last.start()]
    clauses = _parse_clauses(head)
    verdicts = tuple(
        ClauseVerdict(clause_index=int(i), label=label, reason=reason.strip())
        for i, label, reason in _VERDICT_RE.findall(head)
    )
    if clauses and len(verdicts) != len(clauses):
        verdicts = ()
    return AnalysisOutcome(
        identified_span=identified, raw_completion=text, clauses=clauses, verdicts=verdicts
    )


def run_analysis(
    question: str,
    demos: Sequence[AnalysisDemo],
    backend: Backend,
    **prompt_kwargs,
) -> tuple[AnalysisOutcome, PromptBundle, Completion]:
    bundle = build_analysis_prompt(question, demos, **prompt_kwargs)
    completion = backend.complete(bundle)
    outcome = parse_analysis_completion(question, completion.text)
    return outcome, bundle, completion


def build_filtration_prompt(
    question: str,
    identified_span: str,
    *,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Render the filtration prompt; the model completes after the marker."""
    if not identified_span.strip():
        raise PromptError("identified span must be non-empty")
    text = (
        f"[{question}, {identified_span} Q: {FILTRATION_INSTRUCTION} A: {FILTRATION_MARKER}"
    )
    return _bundle(
        text,
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


def run_filtration(
    question: str,
    analysis: AnalysisOutcome,
    backend: Backend,
    **prompt_kwargs,
) -> tuple[FiltrationOutcome, PromptBundle | None, Completion | None]:
    """Run the filtration stage, or skip it when analysis found nothing.

    The skip path makes zero model calls and passes the question through
    unchanged.
    """
    if analysis.identified_span is None:
        return FiltrationOutcome(question, removed_any=False, raw_completion=""), None, None
    bundle = build_filtration_prompt(question, analysis.identified_span, **prompt_kwargs)
    completion = backend.complete(bundle)
    candidate = completion.text
    if not _FILTRATION_MARKER_RE.search(candidate):
        candidate = f"{FILTRATION_MARKER} {candidate}"
    processed = parse_filtration(candidate)
    removed = normalize_whitespace(processed) != normalize_whitespace(question)
    return FiltrationOutcome(processed, removed_any=removed, raw_completion=completion.text), bundle, completion


def run_atf(
    problem_text: str,
    analysis_demos: Sequence[AnalysisDemo],
    downstream: MethodKind,
    demo_set: DemoSet,
    backend: Backend,
    *,
    ip_instruction: str = DEFAULT_IP_INSTRUCTION,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> AtfResult:
    """Run analysis, filtration, and a downstream answering method end to end.

    Failure policy: an unparseable analysis or a failed filtration downgrades
    to answering the original question, with the reason recorded in flags.
    """
    if downstream in (MethodKind.IDENTIFY_IR, MethodKind.IDENTIFY_SHUFFLE_IR):
        raise PromptError(f"method {downstream.value} cannot run downstream of filtration")
    prompt_kwargs = dict(
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )
    flags: set[str] = set()
    prompts: list[PromptBundle] = []
    completions: list[Completion] = []

    analysis_bundle = build_analysis_prompt(problem_text, analysis_demos, **prompt_kwargs)
    analysis_completion = backend.complete(analysis_bundle)
    prompts.append(analysis_bundle)
    completions.append(analysis_completion)
    analysis: AnalysisOutcome | None
    try:
        analysis = parse_analysis_completion(problem_text, analysis_completion.text)
    except AnalysisParseError:
        analysis = None
        flags.add(FLAG_PARSE_ERROR)

    if analysis is None or analysis.identified_span is None:
        filtration = FiltrationOutcome(problem_text, removed_any=False, raw_completion="")
    else:
        filtration_bundle = build_filtration_prompt(
            problem_text, analysis.identified_span, **prompt_kwargs
        )
        filtration_completion = backend.complete(filtration_bundle)
        prompts.append(filtration_bundle)
        completions.append(filtration_completion)
        candidate = filtration_completion.text
        if not _FILTRATION_MARKER_RE.search(candidate):
            candidate = f"{FILTRATION_MARKER} {candidate}"
        try:
            processed = parse_filtration(candidate)
        except FiltrationParseError:
            flags.add(FLAG_FILTRATION_FAILED)
            filtration = FiltrationOutcome(
                problem_text, removed_any=False, raw_completion=filtration_completion.text
            )
        else:
            filtration = FiltrationOutcome(
                processed,
                removed_any=normalize_whitespace(processed) != normalize_whitespace(problem_text),
                raw_completion=filtration_completion.text,
            )

    question = filtration.processed_context
    if downstream is MethodKind.ZERO_COT:
        stage_one, stage_two = build_zero_cot_prompts(question, **prompt_kwargs)
        reasoning = backend.complete(stage_one)
        prompts.append(stage_one)
        completions.append(reasoning)
        final_bundle = stage_two(reasoning.text)
    else:
        final_bundle = build_few_shot_prompt(
            question,
            demo_set,
            downstream,
            instruction=ip_instruction if downstream is MethodKind.IP else "",
            **prompt_kwargs,
        )
    final_completion = backend.complete(final_bundle)
    prompts.append(final_bundle)
    completions.append(final_completion)

    if any(c.finish_reason is FinishReason.LENGTH for c in completions):
        flags.add(FLAG_TRUNCATED)
    extracted = extract_final_answer(final_completion.text)
    return AtfResult(
        analysis=analysis,
        filtration=filtration,
        extracted=extracted,
        prompts=tuple(prompts),
        completions=tuple(c.text for c in completions),
        flags=frozenset(flags),
    )


def _load_guidance() -> dict[str, str]:
    payload = resources.files("distracteval").joinpath("data/analysis_guidance.json")
    return json.loads(payload.read_text(encoding="utf-8"))


def generate_analysis_demo(
    seed_problem: Union[ProblemRecord, PerturbedProblem],
    backend: Backend,
    *,
    guidance: dict[str, str] | None = None,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
) -> AnalysisDemo:
    """Generate one analysis demo with three guided sub-prompts.

    Stages: key information, clause decomposition, then per-clause analysis.
    Each stage's output is validated before the next runs; the identified
    answer is taken from ground truth (the seed's distractor, or the
    no-irrelevant sentinel for clean seeds), never from the model.
    """
    guidance = guidance if guidance is not None else _load_guidance()
    question = seed_problem.question

    def ask(stage: str, text: str) -> str:
        bundle = _bundle(
            text,
            model_name=model_name,
            temperature=temperature,
            max_tokens=max_tokens,
            stop_sequences=(),
        )
        reply = backend.complete(bundle).text.strip()
        if not reply:
            raise GenerationError(stage, reply, "empty completion")
        return reply

    key_information = ask("key_information", guidance["key_information"].format(question=question))

    decomposition = ask("decomposition", guidance["decomposition"].format(question=question))
    indices = sorted({int(i) for i in _CLAUSE_MARKER_RE.findall(decomposition)})
    if not indices:
        raise GenerationError("decomposition", decomposition, "no numbered clauses found")
    expected = list(range(1, indices[-1] + 1))
    if indices != expected:
        raise GenerationError(
            "decomposition", decomposition, f"clause numbering {indices} is not 1..{indices[-1]}"
        )
    clause_count = indices[-1]

    clause_analysis = ask(
        "clause_analysis",
        guidance["clause_analysis"].format(question=question, clauses=decomposition),
    )
    verdict_count = len(_VERDICT_RE.findall(clause_analysis))
    if verdict_count != clause_count:
        raise GenerationError(
            "clause_analysis",
            clause_analysis,
            f"expected {clause_count} clause verdicts, found {verdict_count}",
        )

    rationale = normalize_whitespace(
        f"{key_information} The clauses are: {decomposition} {clause_analysis}"
    )
    if isinstance(seed_problem, PerturbedProblem):
        identified = seed_problem.distractor_sentence
    else:
        identified = NO_IRRELEVANT_PHRASE
    demo = AnalysisDemo(
        question=question, analysis_rationale=rationale, identified_answer=identified
    )
    render = demo.render()
    if not (
        render.startswith("[Q: ")
        and ", A: Because " in render
        and f", {ANALYSIS_ANSWER_MARKER} " in render
        and render.endswith("]")
    ):
        raise GenerationError("render", render, "rendered demo violates the demo grammar")
    return demo


def load_analysis_demos(path: str | Path) -> list[AnalysisDemo]:
    """Load analysis demos from a JSONL fixture of question/rationale/answer rows."""
    path = Path(path)
    demos: list[AnalysisDemo] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                demos.append(
                    AnalysisDemo(
                        question=row["question"],
                        analysis_rationale=row["rationale"],
                        identified_answer=row["answer"],
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path.name} line {line_no}: {exc}") from exc
    if not demos:
        raise ValueError(f"{path.name}: no analysis demos found")
    return demos
