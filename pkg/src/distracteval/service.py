"""HTTP service exposing the evaluation operations.

The service is a thin wrapper: every endpoint validates a request model,
calls into the library, and returns a response model. Domain failures map to
400 with the underlying message; nothing here holds state between requests.
"""

from __future__ import annotations

import json
import random
from pathlib import Path

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, field_validator

from .corpus import Corpus, CorpusFormat, load_corpus, save_corpus, split_sentences
from .gateway import CompletionCache, make_backend
from .metrics import MetricsReport, summarize_records
from .perturb import BUILTIN_TEMPLATES, load_templates, perturb_problem
from .report import ReportFormat, render_report
from .runner import TOOL_VERSION, METHOD_CHOICES, RunConfig, load_run, run_evaluation
from .prompts import DEFAULT_IP_INSTRUCTION, demo_set_from_fixture
from .pipeline import load_analysis_demos

app = FastAPI(title="distracteval", version=TOOL_VERSION)

POSITION_SHUFFLE = "shuffle"

_DOMAIN_ERRORS = (ValueError, RuntimeError, OSError, KeyError, IndexError)


def _fail(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=f"{type(exc).__name__}: {exc}")


class HealthResponse(BaseModel):
    status: str
    version: str


class GenerateRequest(BaseModel):
    source_path: str
    out_path: str
    templates_path: str | None = None
    seed: int = 0
    position: int | str = 0
    count: int | None = Field(default=None, ge=1)

    @field_validator("position")
    @classmethod
    def _check_position(cls, value: "int | str") -> "int | str":
        if isinstance(value, str) and value != POSITION_SHUFFLE:
            raise ValueError(f"position must be an integer or {POSITION_SHUFFLE!r}")
        if isinstance(value, int) and value < 0:
            raise ValueError("position must be non-negative")
        return value


class GenerateResponse(BaseModel):
    out_path: str
    record_count: int
    template_counts: dict[str, int]


class RunRequest(BaseModel):
    corpus_path: str
    corpus_format: str = CorpusFormat.JSONL_GSMIR.value
    method: str
    downstream: str | None = None
    backend: str = "replay"
    cache_path: str | None = None
    out_dir: str | None = None
    model_name: str = "default"
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int = 0
    id_threshold: float = 0.6
    ip_instruction: str = DEFAULT_IP_INSTRUCTION
    shuffle_seed: int | None = None
    max_in_flight: int = Field(default=4, ge=1)
    ltm_two_call: bool = False
    demo_fixture: str | None = None
    analysis_demo_fixture: str | None = None

    @field_validator("method")
    @classmethod
    def _check_method(cls, value: str) -> str:
        if value not in METHOD_CHOICES:
            raise ValueError(f"method must be one of {METHOD_CHOICES}")
        return value


class RunResponse(BaseModel):
    out_dir: str | None
    method: str
    record_count: int
    accuracy: float
    flag_counts: dict[str, int]


class AnalyzeRequest(BaseModel):
    run_dir: str
    out_path: str | None = None


class AnalyzeResponse(BaseModel):
    report: dict
    out_path: str | None


class ReportRequest(BaseModel):
    metrics_path: str
    format: str = ReportFormat.MARKDOWN.value
    out_path: str | None = None

    @field_validator("format")
    @classmethod
    def _check_format(cls, value: str) -> str:
        ReportFormat(value)
        return value


class ReportResponse(BaseModel):
    content: str
    format: str
    out_path: str | None


class CacheVerifyRequest(BaseModel):
    cache_path: str


class CacheVerifyResponse(BaseModel):
    ok: bool
    entry_count: int
    issues: list[str]


@app.get("/health", response_model=HealthResponse)
def health() -> HealthResponse:
    return HealthResponse(status="ok", version=TOOL_VERSION)


@app.post("/corpus/generate", response_model=GenerateResponse)
def generate_corpus(request: GenerateRequest) -> GenerateResponse:
    try:
        source = load_corpus(request.source_path, CorpusFormat.JSONL_GSM8K)
        templates = (
            load_templates(request.templates_path)
            if request.templates_path is not None
            else list(BUILTIN_TEMPLATES)
        )
        if not templates:
            raise ValueError("no templates available")
        rng = random.Random(request.seed)
        records = []
        counts: dict[str, int] = {}
        problems = list(source)[: request.count] if request.count else list(source)
        for problem in problems:
            template = rng.choice(templates)
            fill_seed = rng.randrange(2**32)
            if request.position == POSITION_SHUFFLE:
                index = rng.randint(0, len(split_sentences(problem.question)))
            else:
                index = int(request.position)
            perturbed = perturb_problem(problem, template, fill_seed, insertion_index=index)
            records.append(perturbed)
            counts[template.kind.value] = counts.get(template.kind.value, 0) + 1
        corpus = Corpus(records=tuple(records), name=Path(request.out_path).stem)
        out = save_corpus(corpus, request.out_path, CorpusFormat.JSONL_GSMIR)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    return GenerateResponse(
        out_path=str(out), record_count=len(records), template_counts=dict(sorted(counts.items()))
    )


@app.post("/runs", response_model=RunResponse)
def execute_run(request: RunRequest) -> RunResponse:
    try:
        corpus = load_corpus(request.corpus_path, CorpusFormat(request.corpus_format))
        backend = make_backend(request.backend, request.cache_path)
        config = RunConfig(
            method=request.method,
            dataset=corpus.name,
            downstream=request.downstream,
            model_name=request.model_name,
            temperature=request.temperature,
            max_tokens=request.max_tokens,
            seed=request.seed,
            id_threshold=request.id_threshold,
            ip_instruction=request.ip_instruction,
            shuffle_seed=request.shuffle_seed,
            max_in_flight=request.max_in_flight,
            ltm_two_call=request.ltm_two_call,
            demo_fixture=request.demo_fixture or "",
            analysis_demo_fixture=request.analysis_demo_fixture or "",
        )
        demo_set = (
            demo_set_from_fixture(request.demo_fixture, request.seed)
            if request.demo_fixture
            else None
        )
        analysis_demos = (
            load_analysis_demos(request.analysis_demo_fixture)
            if request.analysis_demo_fixture
            else None
        )
        records = run_evaluation(
            corpus,
            config,
            backend,
            demo_set=demo_set,
            analysis_demos=analysis_demos,
            out_dir=request.out_dir,
        )
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    flag_counts: dict[str, int] = {}
    for record in records:
        for flag in record.flags:
            flag_counts[flag] = flag_counts.get(flag, 0) + 1
    accuracy = sum(1 for r in records if r.correct) / len(records)
    return RunResponse(
        out_dir=request.out_dir,
        method=request.method,
        record_count=len(records),
        accuracy=accuracy,
        flag_counts=dict(sorted(flag_counts.items())),
    )


@app.post("/analyze", response_model=AnalyzeResponse)
def analyze_run(request: AnalyzeRequest) -> AnalyzeResponse:
    try:
        records, manifest = load_run(request.run_dir)
        config_echo = manifest.get("config", {})
        dataset = config_echo.get("dataset") or manifest.get("corpus_name") or "dataset"
        report = summarize_records(records, dataset_name=dataset, config_echo=config_echo)
        payload = report.to_dict()
        out_path = None
        if request.out_path is not None:
            out = Path(request.out_path)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(
                json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
            )
            out_path = str(out)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    return AnalyzeResponse(report=payload, out_path=out_path)


@app.post("/report", response_model=ReportResponse)
def render_metrics(request: ReportRequest) -> ReportResponse:
    try:
        payload = json.loads(Path(request.metrics_path).read_text(encoding="utf-8"))
        report = MetricsReport.from_dict(payload)
        content = render_report(report, ReportFormat(request.format))
        out_path = None
        if request.out_path is not None:
            out = Path(request.out_path)
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(content, encoding="utf-8")
            out_path = str(out)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    return ReportResponse(content=content, format=request.format, out_path=out_path)


@app.post("/cache/verify", response_model=CacheVerifyResponse)
def verify_cache(request: CacheVerifyRequest) -> CacheVerifyResponse:
    try:
        issues = CompletionCache.verify_file(request.cache_path)
    except _DOMAIN_ERRORS as exc:
        raise _fail(exc) from exc
    try:
        entry_count = len(CompletionCache(request.cache_path))
    except (ValueError, KeyError):
        entry_count = 0
    return CacheVerifyResponse(ok=not issues, entry_count=entry_count, issues=issues)


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host="127.0.0.1", port=8000)
