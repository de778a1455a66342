"""Acceptance suite: one test per stated guarantee, each with a runtime budget.

Every test prints a single "ACCEPTANCE criterion N (...): PASS" line once its
assertions and budget hold, so a verbose run reads as a checklist.
"""

from __future__ import annotations

import json
import os
import random
import time
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import pytest

from distracteval.corpus import Corpus, split_sentences
from distracteval.extraction import (
    IdentificationCategory,
    extract_final_answer,
    match_identification,
    score_answer,
)
from distracteval.gateway import (
    CompletionCache,
    ForbidNetworkBackend,
    LiveBackend,
    ReplayBackend,
    ScriptedBackend,
)
from distracteval.metrics import (
    MetricsReport,
    attribute_errors,
    compute_recognition_breakdown,
    summarize_records,
)
from distracteval.perturb import (
    BUILTIN_TEMPLATES,
    PerturbedProblem,
    TemplateKind,
    insert_distractor,
    perturb_problem,
    strip_distractor,
)
from distracteval.pipeline import run_atf
from distracteval.prompts import MethodKind
from distracteval.report import render_report
from distracteval.runner import RunConfig, load_run, run_evaluation

from conftest import FIXTURE_DIR, build_golden_texts, golden_text, make_corpus, make_problem
from test_metrics import CLEAN_CAT, CORRECT_CAT, OTHER_CAT, build_paired_runs, make_record


@contextmanager
def criterion(number: int, name: str, budget_seconds: float):
    start = time.perf_counter()
    yield
    elapsed = time.perf_counter() - start
    assert elapsed < budget_seconds, (
        f"criterion {number} took {elapsed:.2f}s, budget {budget_seconds}s"
    )
    print(f"ACCEPTANCE criterion {number} ({name}): PASS ({elapsed:.2f}s)")


# ---------------------------------------------------------------------------
# 1. error attribution arithmetic


def test_criterion_1_error_attribution_arithmetic() -> None:
    with criterion(1, "error attribution arithmetic", 1.0):
        for errors, identified, expected in ((304, 232, 0.763), (538, 378, 0.703)):
            original, perturbed = build_paired_runs(errors=errors, identified=identified)
            attribution = attribute_errors(original, perturbed)
            assert attribution.errors_on_perturbed_only == errors
            assert attribution.identified_among_errors == identified
            assert round(attribution.fraction, 3) == expected


# ---------------------------------------------------------------------------
# 2. recognition breakdown and its rendered shape


def test_criterion_2_recognition_breakdown() -> None:
    with criterion(2, "recognition breakdown", 1.0):
        records = (
            [make_record(pid=f"a{i}", category=CORRECT_CAT) for i in range(394)]
            + [make_record(pid=f"b{i}", category=OTHER_CAT) for i in range(11)]
            + [make_record(pid=f"c{i}", category=CLEAN_CAT) for i in range(95)]
        )
        breakdown = compute_recognition_breakdown(records)
        assert breakdown.irrelevant_correct == 0.788
        assert breakdown.other_information == 0.022
        assert breakdown.no_irrelevant == 0.190
        total = breakdown.irrelevant_correct + breakdown.other_information + breakdown.no_irrelevant
        assert abs(total - 1.0) <= 1e-9

        report = MetricsReport(
            accuracy={"cot": {"perturbed": 0.552}},
            config_echo={},
            identification_rate=breakdown.irrelevant_correct,
            recognition_breakdown=breakdown,
        )
        lines = render_report(report, "md").splitlines()
        header = lines.index("| Category | Proportion |")
        assert lines[header + 1] == "| --- | --- |"
        assert lines[header + 2 :][:3] == [
            "| irrelevant_correct | 0.788 |",
            "| other_information | 0.022 |",
            "| no_irrelevant | 0.190 |",
        ]


# ---------------------------------------------------------------------------
# 3. perturbation round trip


def test_criterion_3_perturbation_round_trip() -> None:
    with criterion(3, "perturbation round trip", 10.0):
        corpus = make_corpus(n=500, seed=3)
        by_kind = {kind: [] for kind in TemplateKind}
        for template in BUILTIN_TEMPLATES:
            by_kind[template.kind].append(template)
        checked = 0
        for index, problem in enumerate(corpus):
            positions = len(split_sentences(problem.question))
            for kind in TemplateKind:
                templates = by_kind[kind]
                for seed in range(20):
                    template = templates[seed % len(templates)]
                    perturbed = perturb_problem(
                        problem,
                        template,
                        1_000_003 * index + seed,
                        insertion_index=(index + seed) % (positions + 1),
                    )
                    assert strip_distractor(perturbed) == problem
                    checked += 1
        assert checked == 500 * 4 * 20


# ---------------------------------------------------------------------------
# 4. prompt golden files


def test_criterion_4_prompt_golden_files() -> None:
    with criterion(4, "prompt golden files", 1.0):
        rebuilt = build_golden_texts()
        assert len(rebuilt) == 10
        for name, text in rebuilt.items():
            assert text == golden_text(name), f"golden mismatch: {name}"
        assert "Let's think step by step" in rebuilt["zero_cot_stage1"]
        assert (
            "Does the question contain any irrelevant information? "
            "If yes, what is the irrelevant information?" in rebuilt["identify"]
        )
        assert "Because" in rebuilt["atf_analysis"]
        assert "Finally, the answer is" in rebuilt["atf_analysis"]
        assert "Processed Context:" in rebuilt["atf_filtration"]


# ---------------------------------------------------------------------------
# 5. end-to-end replay determinism


def perturbed_synthetic(n: int, *, name: str) -> Corpus:
    names = ("Avery", "Blake", "Casey", "Devon", "Emery", "Flynn", "Gale", "Harlow", "Indy", "Jules")
    records = []
    for i in range(n):
        who = names[i % len(names)]
        a, b = 2 + i % 7, 1 + i % 5
        base = make_problem(
            pid=f"{name}-{i:03d}",
            question=f"{who} has {a} pens and buys {b} more. How many pens does {who} have?",
            gold=a + b,
        )
        distractor = f"A neighbor claims {10 + i} pens is typical."
        records.append(insert_distractor(base, distractor, i % 3))
    return Corpus(records=tuple(records), name=name)


def question_oracle(corpus: Corpus):
    """Answer by recognizing which problem a prompt asks about.

    Analysis prompts get the true distractor, filtration prompts the stripped
    question, and answer prompts the gold answer.
    """
    by_perturbed = {r.question: r for r in corpus}
    by_base = {r.base.question: r for r in corpus}
    assert len(by_perturbed) == len(corpus)

    def script(bundle):
        text = bundle.messages[-1].content
        if text.endswith("A: Processed Context:"):
            for record in corpus:
                if record.question in text:
                    return f"Processed Context: {record.base.question}"
            raise AssertionError("filtration prompt names no known problem")
        if text.startswith("[Q: "):
            tail = text.rsplit("Q: ", 1)[-1][: -len(", A:")]
            return (
                "Because the aside adds nothing, "
                f"Finally, the answer is {by_perturbed[tail].distractor_sentence}"
            )
        tail = text.rsplit("Q: ", 1)[-1][: -len("\nA:")]
        record = by_perturbed.get(tail) or by_base.get(tail)
        assert record is not None, f"unknown question: {tail[:60]!r}"
        return f"The answer is {record.gold_answer}."

    return script


def test_criterion_5_replay_determinism(tmp_path: Path, demo_set, analysis_demos) -> None:
    with criterion(5, "replay determinism", 30.0):
        corpus = perturbed_synthetic(50, name="replay")
        atf_config = RunConfig(method="atf", dataset="perturbed", max_in_flight=1)
        cot_config = RunConfig(method="cot", dataset="perturbed", max_in_flight=1)
        kwargs = {"demo_set": demo_set}
        atf_kwargs = {"demo_set": demo_set, "analysis_demos": analysis_demos}

        cache_path = tmp_path / "cache.jsonl"
        recorder = ReplayBackend(
            CompletionCache(cache_path),
            strict=False,
            delegate=ScriptedBackend(question_oracle(corpus)),
        )
        run_evaluation(corpus, atf_config, recorder, **atf_kwargs)
        run_evaluation(corpus, cot_config, recorder, **kwargs)

        passes = []
        for attempt in ("one", "two"):
            replay = ReplayBackend(CompletionCache(cache_path), strict=True)
            atf_dir = tmp_path / f"atf-{attempt}"
            cot_dir = tmp_path / f"cot-{attempt}"
            atf_records = run_evaluation(corpus, atf_config, replay, **atf_kwargs, out_dir=atf_dir)
            cot_records = run_evaluation(corpus, cot_config, replay, **kwargs, out_dir=cot_dir)
            assert all(not r.flags for r in atf_records + cot_records)
            report = render_report(
                summarize_records(
                    atf_records + cot_records,
                    dataset_name="perturbed",
                    config_echo=atf_config.echo(),
                ),
                "md",
            )
            passes.append(
                (
                    (atf_dir / "results.jsonl").read_bytes(),
                    (cot_dir / "results.jsonl").read_bytes(),
                    report,
                )
            )
        assert passes[0] == passes[1]

        # A finished run resumes without issuing a single completion call.
        for config, extra, out_dir in (
            (atf_config, atf_kwargs, tmp_path / "atf-one"),
            (cot_config, kwargs, tmp_path / "cot-one"),
        ):
            before = (out_dir / "results.jsonl").read_bytes()
            run_evaluation(corpus, config, ForbidNetworkBackend(), **extra, out_dir=out_dir)
            assert (out_dir / "results.jsonl").read_bytes() == before


# ---------------------------------------------------------------------------
# 6. scripted-oracle pipeline correctness


def test_criterion_6_scripted_oracle_pipeline(demo_set, analysis_demos) -> None:
    with criterion(6, "scripted oracle pipeline", 30.0):
        rng = random.Random(11)
        base_corpus = make_corpus(n=200, seed=11, name="oracle")
        perturbed: list[PerturbedProblem] = []
        for i, problem in enumerate(base_corpus):
            positions = len(split_sentences(problem.question))
            perturbed.append(
                perturb_problem(
                    problem,
                    BUILTIN_TEMPLATES[i % len(BUILTIN_TEMPLATES)],
                    rng.randrange(2**32),
                    insertion_index=rng.randint(0, positions),
                )
            )
        corpus = Corpus(records=tuple(perturbed), name="oracle")

        by_perturbed = {r.question: r for r in corpus}
        by_base = {r.base.question: r for r in corpus}
        assert len(by_perturbed) == 200

        def script(bundle):
            text = bundle.messages[-1].content
            if text.endswith("A: Processed Context:"):
                for record in corpus:
                    if record.question in text:
                        return f"Processed Context: {strip_distractor(record).question}"
                raise AssertionError("filtration prompt names no known problem")
            if text.startswith("[Q: "):
                tail = text.rsplit("Q: ", 1)[-1][: -len(", A:")]
                return f"Finally, the answer is {by_perturbed[tail].distractor_sentence}"
            tail = text.rsplit("Q: ", 1)[-1][: -len("\nA:")]
            if tail in by_perturbed:
                # The distractor is still present: the scripted model is misled.
                return "The answer is 0."
            return f"The answer is {by_base[tail].gold_answer}."

        backend = ScriptedBackend(script)
        atf_correct = 0
        for record in corpus:
            result = run_atf(record.question, analysis_demos, MethodKind.COT, demo_set, backend)
            assert result.filtration.processed_context == strip_distractor(record).question
            atf_correct += score_answer(result.extracted, record.gold_answer)
        assert atf_correct == 200

        baseline = run_evaluation(
            corpus,
            RunConfig(method="cot", dataset="perturbed"),
            ScriptedBackend(script),
            demo_set=demo_set,
        )
        assert sum(r.correct for r in baseline) == 0


# ---------------------------------------------------------------------------
# 7. extraction suite


def test_criterion_7_extraction_suite() -> None:
    with criterion(7, "extraction suite", 10.0):
        cases = [
            json.loads(line)
            for line in (FIXTURE_DIR / "extraction_cases.jsonl")
            .read_text(encoding="utf-8")
            .splitlines()
            if line.strip()
        ]
        assert len(cases) >= 40
        for case in cases:
            extracted = extract_final_answer(case["completion"])
            expected = None if case["value"] is None else Fraction(case["value"])
            assert extracted.value == expected, case["completion"]
            assert extracted.method_of_extraction.value == case["method"], case["completion"]

        rng = random.Random(7)
        for _ in range(10_000):
            blob = rng.randbytes(rng.randrange(120)).decode("latin-1")
            extract_final_answer(blob)


# ---------------------------------------------------------------------------
# 8. identification matcher properties


def test_criterion_8_identification_matcher() -> None:
    with criterion(8, "identification matcher", 5.0):
        truth = (
            "However, Enrique insists that selling an average of 7 shirts per day "
            "is the best way to maximise profit."
        )
        verbatim = match_identification(truth, truth, no_irrelevant_claimed=False)
        assert verbatim.category is IdentificationCategory.IRRELEVANT_CORRECT
        assert verbatim.matched_score == 1.0

        for sentinel_claim in (True,):
            verdict = match_identification(None, truth, no_irrelevant_claimed=sentinel_claim)
            assert verdict.category is IdentificationCategory.NO_IRRELEVANT

        pairs = [
            json.loads(line)
            for line in (FIXTURE_DIR / "identification_pairs.jsonl")
            .read_text(encoding="utf-8")
            .splitlines()
            if line.strip()
        ]
        assert len(pairs) == 100
        thresholds = (0.3, 0.6, 0.9)
        verdicts = {
            threshold: [
                match_identification(
                    pair["claimed"], pair["truth"], no_irrelevant_claimed=False, threshold=threshold
                )
                for pair in pairs
            ]
            for threshold in thresholds
        }
        counts = [
            sum(
                1
                for v in verdicts[threshold]
                if v.category is IdentificationCategory.IRRELEVANT_CORRECT
            )
            for threshold in thresholds
        ]
        assert counts == [80, 60, 46]
        # Raising the threshold can only demote a match, never promote one.
        for low, high in zip(thresholds, thresholds[1:]):
            for at_low, at_high in zip(verdicts[low], verdicts[high]):
                if at_high.category is IdentificationCategory.IRRELEVANT_CORRECT:
                    assert at_low.category is IdentificationCategory.IRRELEVANT_CORRECT


# ---------------------------------------------------------------------------
# 9. live run (optional)


@pytest.mark.skipif(
    not os.environ.get("DISTRACTEVAL_ENDPOINT"),
    reason="live backend not configured (DISTRACTEVAL_ENDPOINT unset)",
)
def test_criterion_9_live_run(tmp_path: Path) -> None:
    with criterion(9, "live run", 3600.0):
        corpus = perturbed_synthetic(500, name="live")
        out_dir = tmp_path / "live-run"
        config = RunConfig(method="cot", dataset=corpus.name)
        records = run_evaluation(corpus, config, LiveBackend.from_env(), out_dir=out_dir)
        assert len(records) == 500

        loaded, manifest = load_run(out_dir)
        assert len(loaded) == 500
        assert manifest["record_count"] == 500
        report = render_report(
            summarize_records(records, dataset_name=corpus.name, config_echo=manifest["config"]),
            "md",
        )
        assert "## Accuracy (%)" in report
        assert "| cot |" in report
