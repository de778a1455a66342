"""Evaluation toolkit for math word problems carrying irrelevant information.

Core layers: corpus handling, distractor perturbation, a replayable model
gateway, prompt builders for the baseline methods, the analyze-then-filter
pipeline, metrics, and deterministic report rendering. The HTTP service and
CLI live in :mod:`distracteval.service` and :mod:`distracteval.cli`.
"""

from .corpus import Corpus, CorpusFormat, ProblemRecord, load_corpus, save_corpus
from .extraction import extract_final_answer, match_identification, score_answer
from .gateway import CompletionCache, PromptBundle, cache_key, make_backend
from .metrics import MetricsReport, RunRecord, attribute_errors, summarize_records
from .perturb import (
    BUILTIN_TEMPLATES,
    DistractorTemplate,
    PerturbedProblem,
    TemplateKind,
    insert_distractor,
    perturb_problem,
    strip_distractor,
)
from .pipeline import AnalysisDemo, run_atf
from .prompts import DemoSet, Demonstration, MethodKind
from .report import ReportFormat, render_report
from .runner import TOOL_VERSION, RunConfig, load_run, run_evaluation

__version__ = TOOL_VERSION

__all__ = [
    "AnalysisDemo",
    "BUILTIN_TEMPLATES",
    "CompletionCache",
    "Corpus",
    "CorpusFormat",
    "DemoSet",
    "Demonstration",
    "DistractorTemplate",
    "MethodKind",
    "MetricsReport",
    "PerturbedProblem",
    "ProblemRecord",
    "PromptBundle",
    "ReportFormat",
    "RunConfig",
    "RunRecord",
    "TOOL_VERSION",
    "TemplateKind",
    "attribute_errors",
    "cache_key",
    "extract_final_answer",
    "insert_distractor",
    "load_corpus",
    "load_run",
    "make_backend",
    "match_identification",
    "perturb_problem",
    "render_report",
    "run_atf",
    "run_evaluation",
    "save_corpus",
    "score_answer",
    "strip_distractor",
    "summarize_records",
]
