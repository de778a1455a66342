"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import random
from fractions import Fraction
from pathlib import Path

import pytest

from distracteval.corpus import Corpus, ProblemRecord, SourceTag
from distracteval.gateway import Completion, ScriptedBackend
from distracteval.runner import default_analysis_demos, default_demo_set

FIXTURE_DIR = Path(__file__).parent / "fixtures"
GOLDEN_DIR = FIXTURE_DIR / "golden"

# Frozen inputs behind the golden prompt files. Changing any of these
# invalidates every file under tests/fixtures/golden/.
GOLDEN_QUESTION = (
    "Tom has 3 red pens and 4 blue pens. His sister believes that 5 pens are "
    "enough for anyone. How many pens does Tom have?"
)
GOLDEN_SPAN = "His sister believes that 5 pens are enough for anyone."
GOLDEN_STAGE_ONE = "He has 3 + 4 = 7 pens in total."
GOLDEN_SHUFFLE_SEED = 7

_NAMES = (
    "Ava", "Ben", "Carla", "Dan", "Elena", "Felix", "Grace", "Hugo",
    "Iris", "Jonas", "Kira", "Leo", "Mona", "Nils", "Opal", "Pablo",
)
_ITEMS = ("apples", "pens", "marbles", "books", "coins", "stickers", "cards", "shells")


def golden_text(name: str) -> str:
    return (GOLDEN_DIR / f"{name}.txt").read_text(encoding="utf-8")


def make_problem(
    *,
    pid: str = "p1",
    question: str = "Tom has 3 pens and buys 4 more. How many pens does Tom have?",
    gold: int | str | Fraction = 7,
    rationale: str | None = None,
    source_tag: SourceTag = SourceTag.CLEAN,
) -> ProblemRecord:
    return ProblemRecord(
        id=pid,
        question=question,
        gold_answer=Fraction(gold),
        gold_rationale=rationale,
        source_tag=source_tag,
    )


def synth_question(rng: random.Random, *, sentences: int) -> tuple[str, Fraction]:
    """Build a small arithmetic word problem with a known gold answer.

    The first sentence carries the numbers; extra sentences are filler so
    insertion positions vary. Returns (question, gold).
    """
    name = rng.choice(_NAMES)
    item = rng.choice(_ITEMS)
    a = rng.randint(2, 60)
    b = rng.randint(2, 60)
    parts = [f"{name} has {a} {item} and buys {b} more."]
    for _ in range(sentences - 2):
        other = rng.choice(_NAMES)
        parts.append(f"{other} watches from the porch.")
    parts.append(f"How many {item} does {name} have now?")
    return " ".join(parts), Fraction(a + b)


def make_corpus(*, n: int, seed: int = 0, name: str = "synth") -> Corpus:
    rng = random.Random(seed)
    records = []
    for i in range(n):
        question, gold = synth_question(rng, sentences=rng.randint(2, 5))
        records.append(
            ProblemRecord(id=f"{name}-{i:04d}", question=question, gold_answer=gold)
        )
    return Corpus(name=name, records=tuple(records))


def answer_script(answers: dict[str, str]):
    """Script a backend on the last user message: first matching key wins."""

    def script(bundle):
        text = bundle.messages[-1].content
        for needle, reply in answers.items():
            if needle in text:
                return reply
        raise AssertionError(f"unscripted prompt: {text[:120]!r}")

    return script


def constant_backend(text: str = "The answer is 7.") -> ScriptedBackend:
    return ScriptedBackend(lambda bundle: Completion(text=text))


def build_golden_texts() -> dict[str, str]:
    """Rebuild the prompt texts frozen under tests/fixtures/golden/."""
    from distracteval.pipeline import build_analysis_prompt, build_filtration_prompt
    from distracteval.prompts import (
        build_cot_prompt,
        build_identify_prompt,
        build_ip_prompt,
        build_ltm_prompt,
        build_sp_prompt,
        build_zero_cot_prompts,
    )
    from distracteval.runner import _identify_demo_pairs

    demos = default_demo_set(0)
    pairs = _identify_demo_pairs(demos)
    stage1, make_stage2 = build_zero_cot_prompts(GOLDEN_QUESTION)
    return {
        "sp": build_sp_prompt(GOLDEN_QUESTION, demos).messages[-1].content,
        "cot": build_cot_prompt(GOLDEN_QUESTION, demos).messages[-1].content,
        "zero_cot_stage1": stage1.messages[-1].content,
        "zero_cot_stage2": make_stage2(GOLDEN_STAGE_ONE).messages[-1].content,
        "ltm": build_ltm_prompt(GOLDEN_QUESTION, demos).messages[-1].content,
        "ip": build_ip_prompt(GOLDEN_QUESTION, demos).messages[-1].content,
        "identify": build_identify_prompt(pairs, GOLDEN_QUESTION).messages[-1].content,
        "identify_shuffle": build_identify_prompt(
            pairs, GOLDEN_QUESTION, shuffle_seed=GOLDEN_SHUFFLE_SEED
        ).messages[-1].content,
        "atf_analysis": build_analysis_prompt(
            GOLDEN_QUESTION, default_analysis_demos()
        ).messages[-1].content,
        "atf_filtration": build_filtration_prompt(
            GOLDEN_QUESTION, GOLDEN_SPAN
        ).messages[-1].content,
    }


@pytest.fixture(scope="session")
def demo_set():
    return default_demo_set(0)


@pytest.fixture(scope="session")
def analysis_demos():
    return default_analysis_demos()
