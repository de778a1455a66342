"""Evaluation runner: executes a method over a corpus and persists results.

A run directory holds manifest.json (configuration echo plus a corpus digest;
no timestamps) and results.jsonl (one record per problem, corpus order).
Reruns resume: completed problems are never re-issued, so replaying a
finished run makes zero backend calls and rewrites byte-identical results.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Sequence, Union

from .corpus import Corpus, ProblemRecord, format_gold_answer
from .extraction import (
    NO_IRRELEVANT_PHRASE,
    extract_final_answer,
    match_identification,
    parse_identification_claim,
    score_answer,
)
from .gateway import Backend, Completion, FinishReason, PromptBundle, cache_key, complete_batch
from .metrics import RunRecord
from .perturb import PerturbedProblem, insert_distractor, recover_insertion
from .pipeline import AnalysisDemo, load_analysis_demos, run_atf
from .prompts import (
    DEFAULT_IP_INSTRUCTION,
    DemoSet,
    MethodKind,
    build_few_shot_prompt,
    build_identify_prompt,
    build_ltm_decompose_prompt,
    build_ltm_solve_prompt,
    build_zero_cot_prompts,
    demo_set_from_fixture,
)

TOOL_VERSION = "0.1.0"

METHOD_ATF = "atf"

METHOD_CHOICES = tuple(kind.value for kind in MethodKind) + (METHOD_ATF,)

FLAG_BACKEND_ERROR = "backend_error"

RESULTS_FILENAME = "results.jsonl"
MANIFEST_FILENAME = "manifest.json"

_DEMO_FIXTURE = "data/demonstrations.jsonl"
_ANALYSIS_DEMO_FIXTURE = "data/analysis_demos.jsonl"


class RunnerError(RuntimeError):
    """A run cannot proceed as configured."""


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run's outputs, echoed into its manifest."""

    method: str
    dataset: str
    downstream: str | None = None
    model_name: str = "default"
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int = 0
    id_threshold: float = 0.6
    ip_instruction: str = DEFAULT_IP_INSTRUCTION
    shuffle_seed: int | None = None
    max_in_flight: int = 4
    ltm_two_call: bool = False
    demo_fixture: str = ""
    analysis_demo_fixture: str = ""

    def __post_init__(self) -> None:
        if self.method not in METHOD_CHOICES:
            raise RunnerError(f"unknown method {self.method!r}; expected one of {METHOD_CHOICES}")
        if self.downstream is not None and self.downstream not in (
            k.value for k in MethodKind if k not in (MethodKind.IDENTIFY_IR, MethodKind.IDENTIFY_SHUFFLE_IR)
        ):
            raise RunnerError(f"downstream {self.downstream!r} cannot follow filtration")
        if self.max_in_flight < 1:
            raise RunnerError(f"max_in_flight {self.max_in_flight} must be positive")

    def echo(self) -> dict[str, str]:
        echo: dict[str, str] = {}
        for spec in fields(self):
            value = getattr(self, spec.name)
            echo[spec.name] = "" if value is None else str(value)
        return echo


def corpus_digest(corpus: Corpus) -> str:
    """Content digest of a corpus, independent of its file path."""
    hasher = hashlib.sha256()
    for record in corpus:
        payload: dict = {
            "id": record.id,
            "question": record.question,
            "answer": format_gold_answer(record.gold_answer),
        }
        if isinstance(record, PerturbedProblem):
            payload["distractor"] = record.distractor_sentence
            payload["insertion_index"] = record.insertion_index
        hasher.update(
            json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode(
                "utf-8"
            )
        )
        hasher.update(b"\n")
    return hasher.hexdigest()


def default_demo_set(rng_seed: int = 0) -> DemoSet:
    source = resources.files("distracteval").joinpath(_DEMO_FIXTURE)
    with resources.as_file(source) as path:
        return demo_set_from_fixture(path, rng_seed)


def default_analysis_demos() -> list[AnalysisDemo]:
    source = resources.files("distracteval").joinpath(_ANALYSIS_DEMO_FIXTURE)
    with resources.as_file(source) as path:
        return load_analysis_demos(path)


def _identify_demo_pairs(demo_set: DemoSet) -> list[tuple[Union[ProblemRecord, PerturbedProblem], str]]:
    pairs: list[tuple[Union[ProblemRecord, PerturbedProblem], str]] = []
    for index, demo in enumerate(demo_set):
        base_id = f"demo-{index}"
        if demo.has_distractor:
            assert demo.distractor is not None
            base_question, insertion_index = recover_insertion(demo.question, demo.distractor)
            base = ProblemRecord(id=base_id, question=base_question, gold_answer=demo.final_answer)
            record: Union[ProblemRecord, PerturbedProblem] = insert_distractor(
                base, demo.distractor, insertion_index
            )
            expected = demo.distractor
        else:
            record = ProblemRecord(id=base_id, question=demo.question, gold_answer=demo.final_answer)
            expected = NO_IRRELEVANT_PHRASE
        pairs.append((record, expected))
    return pairs


def _completion_flags(completions: Sequence[Completion]) -> set[str]:
    flags: set[str] = set()
    if any(c.finish_reason is FinishReason.ERROR for c in completions):
        flags.add(FLAG_BACKEND_ERROR)
    if any(c.finish_reason is FinishReason.LENGTH for c in completions):
        flags.add("truncated")
    return flags


def _answer_record(
    problem: Union[ProblemRecord, PerturbedProblem],
    method: str,
    bundles: Sequence[PromptBundle],
    completions: Sequence[Completion],
    *,
    downstream: str | None = None,
) -> RunRecord:
    flags = _completion_flags(completions)
    final = completions[-1]
    if final.finish_reason is FinishReason.ERROR:
        extracted = extract_final_answer("")
        correct = False
    else:
        extracted = extract_final_answer(final.text)
        correct = score_answer(extracted, problem.gold_answer)
    return RunRecord(
        problem_id=problem.id,
        method=method,
        extracted=extracted,
        correct=correct,
        downstream=downstream,
        prompts=tuple(cache_key(b) for b in bundles),
        completions=tuple(c.text for c in completions),
        flags=frozenset(flags),
    )


def _run_single_stage(
    pending: Sequence[Union[ProblemRecord, PerturbedProblem]],
    method: MethodKind,
    config: RunConfig,
    demo_set: DemoSet,
    backend: Backend,
    prompt_kwargs: dict,
) -> list[RunRecord]:
    bundles = [
        build_few_shot_prompt(
            problem.question,
            demo_set,
            method,
            instruction=config.ip_instruction if method is MethodKind.IP else "",
            **prompt_kwargs,
        )
        for problem in pending
    ]
    completions = complete_batch(bundles, backend, config.max_in_flight)
    return [
        _answer_record(problem, method.value, [bundle], [completion])
        for problem, bundle, completion in zip(pending, bundles, completions)
    ]


def _run_two_wave(
    pending: Sequence[Union[ProblemRecord, PerturbedProblem]],
    method: MethodKind,
    config: RunConfig,
    demo_set: DemoSet,
    backend: Backend,
    prompt_kwargs: dict,
) -> list[RunRecord]:
    """Two-call methods: a reasoning wave, then an answer wave.

    Problems whose first wave errored are not issued a second call.
    """
    if method is MethodKind.ZERO_COT:
        stage_pairs = [build_zero_cot_prompts(p.question, **prompt_kwargs) for p in pending]
        first_bundles = [pair[0] for pair in stage_pairs]
    else:
        first_bundles = [
            build_ltm_decompose_prompt(p.question, demo_set, **prompt_kwargs) for p in pending
        ]
    first_wave = complete_batch(first_bundles, backend, config.max_in_flight)

    second_indices = [
        i for i, c in enumerate(first_wave) if c.finish_reason is not FinishReason.ERROR
    ]
    second_bundles = []
    for i in second_indices:
        if method is MethodKind.ZERO_COT:
            second_bundles.append(stage_pairs[i][1](first_wave[i].text))
        else:
            second_bundles.append(
                build_ltm_solve_prompt(
                    pending[i].question, first_wave[i].text, demo_set, **prompt_kwargs
                )
            )
    second_wave = complete_batch(second_bundles, backend, config.max_in_flight)
    second_by_index = dict(zip(second_indices, zip(second_bundles, second_wave)))

    records = []
    for i, problem in enumerate(pending):
        bundles = [first_bundles[i]]
        completions = [first_wave[i]]
        if i in second_by_index:
            bundle, completion = second_by_index[i]
            bundles.append(bundle)
            completions.append(completion)
        records.append(_answer_record(problem, method.value, bundles, completions))
    return records


def _run_identify(
    pending: Sequence[Union[ProblemRecord, PerturbedProblem]],
    method: MethodKind,
    config: RunConfig,
    demo_set: DemoSet,
    backend: Backend,
    prompt_kwargs: dict,
) -> list[RunRecord]:
    pairs = _identify_demo_pairs(demo_set)
    shuffle_seed = None
    if method is MethodKind.IDENTIFY_SHUFFLE_IR:
        shuffle_seed = config.shuffle_seed if config.shuffle_seed is not None else config.seed
    bundles = [
        build_identify_prompt(pairs, problem.question, shuffle_seed=shuffle_seed, **prompt_kwargs)
        for problem in pending
    ]
    completions = complete_batch(bundles, backend, config.max_in_flight)
    records = []
    for problem, bundle, completion in zip(pending, bundles, completions):
        flags = _completion_flags([completion])
        if completion.finish_reason is FinishReason.ERROR:
            claim, no_claim = None, False
        else:
            claim, no_claim = parse_identification_claim(completion.text)
        identification = None
        if isinstance(problem, PerturbedProblem):
            identification = match_identification(
                claim,
                problem.distractor_sentence,
                no_irrelevant_claimed=no_claim,
                threshold=config.id_threshold,
            )
        records.append(
            RunRecord(
                problem_id=problem.id,
                method=method.value,
                extracted=None,
                correct=False,
                prompts=(cache_key(bundle),),
                completions=(completion.text,),
                identification=identification,
                flags=frozenset(flags),
            )
        )
    return records


def _run_atf(
    pending: Sequence[Union[ProblemRecord, PerturbedProblem]],
    config: RunConfig,
    demo_set: DemoSet,
    analysis_demos: Sequence[AnalysisDemo],
    backend: Backend,
    prompt_kwargs: dict,
) -> list[RunRecord]:
    downstream = MethodKind(config.downstream or MethodKind.COT.value)

    def run_one(problem: Union[ProblemRecord, PerturbedProblem]) -> RunRecord:
        try:
            result = run_atf(
                problem.question,
                analysis_demos,
                downstream,
                demo_set,
                backend,
                ip_instruction=config.ip_instruction,
                **prompt_kwargs,
            )
        except Exception as exc:
            identification = None
            if isinstance(problem, PerturbedProblem):
                identification = match_identification(
                    None,
                    problem.distractor_sentence,
                    no_irrelevant_claimed=False,
                    threshold=config.id_threshold,
                )
            return RunRecord(
                problem_id=problem.id,
                method=METHOD_ATF,
                extracted=None,
                correct=False,
                downstream=downstream.value,
                completions=(f"{type(exc).__name__}: {exc}",),
                identification=identification,
                flags=frozenset({FLAG_BACKEND_ERROR}),
            )
        identification = None
        if isinstance(problem, PerturbedProblem):
            span = result.analysis.identified_span if result.analysis is not None else None
            no_claim = result.analysis is not None and result.analysis.identified_span is None
            identification = match_identification(
                span,
                problem.distractor_sentence,
                no_irrelevant_claimed=no_claim,
                threshold=config.id_threshold,
            )
        return RunRecord(
            problem_id=problem.id,
            method=METHOD_ATF,
            extracted=result.extracted,
            correct=score_answer(result.extracted, problem.gold_answer),
            downstream=downstream.value,
            prompts=tuple(cache_key(b) for b in result.prompts),
            completions=result.completions,
            identification=identification,
            flags=result.flags,
        )

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        return list(pool.map(run_one, pending))


def _record_line(record: RunRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, sort_keys=True)


def _append_records(path: Path, records: Sequence[RunRecord]) -> None:
    with path.open("a", encoding="utf-8") as handle:
        for record in records:
            handle.write(_record_line(record) + "\n")


def _rewrite_records(path: Path, records: Sequence[RunRecord]) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(_record_line(record) + "\n")
    os.replace(tmp, path)


def _build_manifest(corpus: Corpus, config: RunConfig) -> dict:
    return {
        "config": config.echo(),
        "corpus_digest": corpus_digest(corpus),
        "corpus_name": corpus.name,
        "record_count": len(corpus),
        "tool_version": TOOL_VERSION,
    }


def _load_existing(
    out_dir: Path, manifest: dict, corpus_ids: set[str]
) -> dict[str, RunRecord]:
    manifest_path = out_dir / MANIFEST_FILENAME
    results_path = out_dir / RESULTS_FILENAME
    existing: dict[str, RunRecord] = {}
    if manifest_path.exists():
        found = json.loads(manifest_path.read_text(encoding="utf-8"))
        if found != manifest:
            raise RunnerError(
                f"run directory {out_dir} was produced by a different configuration or corpus; "
                "refusing to mix results"
            )
    if results_path.exists():
        with results_path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    record = RunRecord.from_dict(json.loads(line))
                except (json.JSONDecodeError, KeyError, ValueError) as exc:
                    raise RunnerError(f"{results_path} line {line_no}: {exc}") from exc
                if record.problem_id not in corpus_ids:
                    raise RunnerError(
                        f"{results_path} line {line_no}: record for unknown problem "
                        f"{record.problem_id!r}"
                    )
                existing[record.problem_id] = record
    return existing


def run_evaluation(
    corpus: Corpus,
    config: RunConfig,
    backend: Backend,
    *,
    demo_set: DemoSet | None = None,
    analysis_demos: Sequence[AnalysisDemo] | None = None,
    out_dir: str | Path | None = None,
) -> list[RunRecord]:
    """Run one method over a corpus, returning records in corpus order.

    With ``out_dir`` set, the manifest and results are persisted there and a
    rerun resumes: problems already recorded are skipped entirely.
    """
    if len(corpus) == 0:
        raise RunnerError("corpus is empty")
    if demo_set is None:
        demo_set = default_demo_set(config.seed)
    if analysis_demos is None and config.method == METHOD_ATF:
        analysis_demos = default_analysis_demos()

    manifest = _build_manifest(corpus, config)
    existing: dict[str, RunRecord] = {}
    out_path = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        existing = _load_existing(out_path, manifest, {r.id for r in corpus})
        manifest_path = out_path / MANIFEST_FILENAME
        tmp = manifest_path.with_name(manifest_path.name + ".tmp")
        tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, manifest_path)

    pending = [record for record in corpus if record.id not in existing]
    prompt_kwargs = dict(
        model_name=config.model_name,
        temperature=config.temperature,
        max_tokens=config.max_tokens,
    )

    new_records: list[RunRecord] = []
    if pending:
        if config.method == METHOD_ATF:
            assert analysis_demos is not None
            new_records = _run_atf(pending, config, demo_set, analysis_demos, backend, prompt_kwargs)
        else:
            method = MethodKind(config.method)
            if method in (MethodKind.SP, MethodKind.COT, MethodKind.IP) or (
                method is MethodKind.LTM and not config.ltm_two_call
            ):
                new_records = _run_single_stage(
                    pending, method, config, demo_set, backend, prompt_kwargs
                )
            elif method is MethodKind.ZERO_COT or method is MethodKind.LTM:
                new_records = _run_two_wave(
                    pending, method, config, demo_set, backend, prompt_kwargs
                )
            else:
                new_records = _run_identify(
                    pending, method, config, demo_set, backend, prompt_kwargs
                )

    by_id = dict(existing)
    for record in new_records:
        by_id[record.problem_id] = record
    ordered = [by_id[record.id] for record in corpus]

    if out_path is not None:
        results_path = out_path / RESULTS_FILENAME
        if new_records:
            _append_records(results_path, new_records)
        _rewrite_records(results_path, ordered)
    return ordered


def load_run(out_dir: str | Path) -> tuple[list[RunRecord], dict]:
    """Load a run directory's records and manifest."""
    out_dir = Path(out_dir)
    manifest_path = out_dir / MANIFEST_FILENAME
    results_path = out_dir / RESULTS_FILENAME
    if not results_path.exists():
        raise RunnerError(f"no {RESULTS_FILENAME} in {out_dir}")
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    records: list[RunRecord] = []
    with results_path.open(encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                records.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise RunnerError(f"{results_path} line {line_no}: {exc}") from exc
    return records, manifest
