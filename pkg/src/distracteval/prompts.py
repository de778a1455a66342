"""Prompt construction for the baseline answering methods.

Each builder renders a deterministic single-user-message prompt bundle from a
question and a demonstration set. Formats are frozen by golden-file tests;
change them only together with those fixtures.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Sequence, Union

from .corpus import ProblemRecord, parse_gold_answer
from .gateway import ChatMessage, MessageRole, PromptBundle
from .perturb import PerturbedProblem, shuffle_distractor_position

DEFAULT_IP_INSTRUCTION = "Feel free to ignore irrelevant information in the problem description."

IDENTIFY_PROBE = (
    "Does the question contain any irrelevant information? "
    "If yes, what is the irrelevant information?"
)

ZERO_COT_TRIGGER = "Let's think step by step"

ZERO_COT_ANSWER_CUE = "Therefore, the answer (arabic numerals) is"

LTM_CUE = "To solve this, we need to answer:"

_DEMO_JOIN = "\n\n"


class PromptError(ValueError):
    """A prompt cannot be built from the given inputs."""


class MethodKind(str, Enum):
    SP = "sp"
    COT = "cot"
    ZERO_COT = "0cot"
    LTM = "ltm"
    IP = "ip"
    IDENTIFY_IR = "identify"
    IDENTIFY_SHUFFLE_IR = "identify-shuffle"


SINGLE_STAGE_METHODS = (MethodKind.SP, MethodKind.COT, MethodKind.LTM, MethodKind.IP)


@dataclass(frozen=True)
class Demonstration:
    """A worked example: question, final answer, and optional rationales."""

    question: str
    final_answer: Fraction
    rationale: str | None = None
    ltm_rationale: str | None = None
    has_distractor: bool = False
    distractor: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "final_answer", Fraction(self.final_answer))
        if not self.question.strip():
            raise PromptError("demonstration question must be non-empty")
        if self.has_distractor and not (self.distractor and self.distractor.strip()):
            raise PromptError(
                f"distractor-bearing demonstration must carry its distractor: {self.question[:60]!r}"
            )
        if not self.has_distractor and self.distractor is not None:
            raise PromptError(
                f"clean demonstration must not carry a distractor: {self.question[:60]!r}"
            )


@dataclass(frozen=True)
class DemoSet:
    demos: tuple[Demonstration, ...]
    sampling_descriptor: str = ""
    rng_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "demos", tuple(self.demos))
        if not self.demos:
            raise PromptError("demo set must contain at least one demonstration")

    def __len__(self) -> int:
        return len(self.demos)

    def __iter__(self):
        return iter(self.demos)


def sample_demo_records(
    distractor_pool: Sequence[Demonstration],
    clean_pool: Sequence[Demonstration],
    rng_seed: int,
    *,
    n_distractor: int = 6,
    n_clean: int = 4,
) -> list[Demonstration]:
    """Sample the standard demo mix: 6 distractor-bearing plus 4 clean, shuffled.

    Deterministic per seed. Pools must be disjoint by question text.
    """
    if len(distractor_pool) < n_distractor:
        raise PromptError(
            f"distractor pool holds {len(distractor_pool)} demos, need {n_distractor}"
        )
    if len(clean_pool) < n_clean:
        raise PromptError(f"clean pool holds {len(clean_pool)} demos, need {n_clean}")
    overlap = {d.question for d in distractor_pool} & {d.question for d in clean_pool}
    if overlap:
        raise PromptError(f"pools overlap on {len(overlap)} question(s)")
    rng = random.Random(rng_seed)
    picked = rng.sample(list(distractor_pool), n_distractor) + rng.sample(list(clean_pool), n_clean)
    rng.shuffle(picked)
    return picked


def sample_demo_set(
    distractor_pool: Sequence[Demonstration],
    clean_pool: Sequence[Demonstration],
    rng_seed: int,
    *,
    n_distractor: int = 6,
    n_clean: int = 4,
) -> DemoSet:
    demos = sample_demo_records(
        distractor_pool, clean_pool, rng_seed, n_distractor=n_distractor, n_clean=n_clean
    )
    return DemoSet(
        demos=tuple(demos),
        sampling_descriptor=f"{n_distractor} distractor-bearing + {n_clean} clean",
        rng_seed=rng_seed,
    )


def load_demonstrations(path: str | Path) -> list[Demonstration]:
    """Load demonstrations from a JSONL fixture.

    Rows carry question, rationale, ltm_rationale, answer, has_distractor,
    and distractor (null for clean rows).
    """
    path = Path(path)
    demos: list[Demonstration] = []
    with path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                demos.append(
                    Demonstration(
                        question=row["question"],
                        final_answer=parse_gold_answer(str(row["answer"])),
                        rationale=row.get("rationale"),
                        ltm_rationale=row.get("ltm_rationale"),
                        has_distractor=bool(row.get("has_distractor", False)),
                        distractor=row.get("distractor"),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise PromptError(f"{path.name} line {line_no}: {exc}") from exc
    if not demos:
        raise PromptError(f"{path.name}: no demonstrations found")
    return demos


def demo_set_from_fixture(path: str | Path, rng_seed: int = 0) -> DemoSet:
    """Build the standard demo set from a fixture file, sampled per seed."""
    demos = load_demonstrations(path)
    distractor_pool = [d for d in demos if d.has_distractor]
    clean_pool = [d for d in demos if not d.has_distractor]
    return sample_demo_set(distractor_pool, clean_pool, rng_seed)


def _format_number(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def _render_demo(demo: Demonstration, method: MethodKind) -> str:
    answer = _format_number(demo.final_answer)
    if method is MethodKind.SP:
        return f"Q: {demo.question}\nA: The answer is {answer}."
    if method in (MethodKind.COT, MethodKind.IP):
        if not demo.rationale:
            raise PromptError(
                f"chain-of-thought demo needs a rationale: {demo.question[:60]!r}"
            )
        return f"Q: {demo.question}\nA: {demo.rationale} The answer is {answer}."
    if method is MethodKind.LTM:
        if not demo.ltm_rationale:
            raise PromptError(
                f"least-to-most demo needs a decomposition rationale: {demo.question[:60]!r}"
            )
        return f"Q: {demo.question}\nA: {LTM_CUE} {demo.ltm_rationale} The answer is {answer}."
    raise PromptError(f"method {method.value} has no demo rendering")


def _bundle(
    text: str,
    *,
    model_name: str,
    temperature: float,
    max_tokens: int,
    stop_sequences: tuple[str, ...],
) -> PromptBundle:
    return PromptBundle(
        messages=(ChatMessage(role=MessageRole.USER, content=text),),
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


def build_few_shot_prompt(
    question: str,
    demo_set: DemoSet,
    method: MethodKind,
    *,
    instruction: str = "",
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Render a single-stage few-shot prompt: demos, then the test question.

    The test question appears exactly once, as the final block. An optional
    instruction line (used by the ignore-instruction method) is prepended.
    """
    if method not in SINGLE_STAGE_METHODS:
        raise PromptError(f"method {method.value} is not single-stage few-shot")
    blocks = [_render_demo(demo, method) for demo in demo_set]
    blocks.append(f"Q: {question}\nA:")
    text = _DEMO_JOIN.join(blocks)
    if method is MethodKind.IP:
        if not instruction.strip():
            raise PromptError("ignore-instruction method needs a non-blank instruction")
        text = f"{instruction}{_DEMO_JOIN}{text}"
    return _bundle(
        text,
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


def build_sp_prompt(question: str, demo_set: DemoSet, **kwargs) -> PromptBundle:
    return build_few_shot_prompt(question, demo_set, MethodKind.SP, **kwargs)


def build_cot_prompt(question: str, demo_set: DemoSet, **kwargs) -> PromptBundle:
    return build_few_shot_prompt(question, demo_set, MethodKind.COT, **kwargs)


def build_ltm_prompt(question: str, demo_set: DemoSet, **kwargs) -> PromptBundle:
    return build_few_shot_prompt(question, demo_set, MethodKind.LTM, **kwargs)


def build_ip_prompt(
    question: str,
    demo_set: DemoSet,
    *,
    instruction: str = DEFAULT_IP_INSTRUCTION,
    **kwargs,
) -> PromptBundle:
    return build_few_shot_prompt(
        question, demo_set, MethodKind.IP, instruction=instruction, **kwargs
    )


def build_zero_cot_prompts(
    question: str,
    *,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> tuple[PromptBundle, Callable[[str], PromptBundle]]:
    """Build the zero-shot chain-of-thought pair.

    Stage one elicits reasoning with the step-by-step trigger. The returned
    callable folds the stage-one output into the stage-two prompt, whose
    answer cue pins the final numeral.
    """
    stage_one_text = f"Q: {question}\nA: {ZERO_COT_TRIGGER}"
    stage_one = _bundle(
        stage_one_text,
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )

    def stage_two(reasoning_output: str) -> PromptBundle:
        text = f"{stage_one_text} {reasoning_output.strip()}\n{ZERO_COT_ANSWER_CUE}"
        return _bundle(
            text,
            model_name=model_name,
            temperature=temperature,
            max_tokens=max_tokens,
            stop_sequences=stop_sequences,
        )

    return stage_one, stage_two


def build_ltm_decompose_prompt(
    question: str,
    demo_set: DemoSet,
    *,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Stage one of the two-call least-to-most variant: elicit subquestions only."""
    blocks = []
    for demo in demo_set:
        if not demo.ltm_rationale:
            raise PromptError(
                f"least-to-most demo needs a decomposition rationale: {demo.question[:60]!r}"
            )
        blocks.append(f"Q: {demo.question}\nA: {LTM_CUE} {demo.ltm_rationale}")
    blocks.append(f"Q: {question}\nA: {LTM_CUE}")
    return _bundle(
        _DEMO_JOIN.join(blocks),
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


def build_ltm_solve_prompt(
    question: str,
    decomposition: str,
    demo_set: DemoSet,
    *,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Stage two of the two-call least-to-most variant: solve with the decomposition inline."""
    if not decomposition.strip():
        raise PromptError("decomposition must be non-empty")
    blocks = [_render_demo(demo, MethodKind.LTM) for demo in demo_set]
    blocks.append(f"Q: {question}\nA: {LTM_CUE} {decomposition.strip()}")
    return _bundle(
        _DEMO_JOIN.join(blocks),
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )


IdentifyDemo = tuple[Union[ProblemRecord, PerturbedProblem], str]


def build_identify_prompt(
    demos: Sequence[IdentifyDemo],
    question: str,
    *,
    shuffle_seed: int | None = None,
    model_name: str = "default",
    temperature: float = 0.0,
    max_tokens: int = 512,
    stop_sequences: tuple[str, ...] = (),
) -> PromptBundle:
    """Build the irrelevance-identification probe prompt.

    Each demo renders as a bracketed block pairing its question with the probe
    and the expected identification (the distractor sentence, or the
    no-irrelevant sentinel for clean demos). With ``shuffle_seed`` set, every
    distractor-bearing demo has its distractor relocated to a seeded random
    sentence position first.
    """
    if not demos:
        raise PromptError("identification prompt needs at least one demo")
    rng = random.Random(shuffle_seed) if shuffle_seed is not None else None
    blocks: list[str] = []
    for record, expected in demos:
        if not expected.strip():
            raise PromptError("expected identification must be non-empty")
        if rng is not None:
            sub_seed = rng.randrange(2**32)
            if isinstance(record, PerturbedProblem):
                record = shuffle_distractor_position(record, sub_seed)
        blocks.append(
            f"[Q: {record.question} Q: {IDENTIFY_PROBE} A: The answer is {expected}]"
        )
    blocks.append(f"Q: {question} Q: {IDENTIFY_PROBE} A:")
    return _bundle(
        "\n".join(blocks),
        model_name=model_name,
        temperature=temperature,
        max_tokens=max_tokens,
        stop_sequences=stop_sequences,
    )
