"""Command-line client for the evaluation service.

The CLI never computes anything itself: each subcommand builds a request,
sends it to the service (in-process by default, or a remote --server), and
prints the response. A simple key=value config file can pre-set any flag;
explicit flags win.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx

from .report import ReportFormat
from .runner import METHOD_CHOICES


def _position(value: str) -> "int | str":
    if value == "shuffle":
        return value
    try:
        return int(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(
            f"position must be an integer or 'shuffle', got {value!r}"
        ) from exc


def _load_config(path: str) -> dict[str, str]:
    config: dict[str, str] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path} line {line_no}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        config[key.strip().replace("-", "_")] = value.strip()
    return config


def _apply_config(parsers: list[argparse.ArgumentParser], config: dict[str, str]) -> None:
    """Turn config entries into parser defaults, so explicit flags still win."""
    for parser in parsers:
        updates = {}
        for action in parser._actions:
            if action.dest in config:
                raw = config[action.dest]
                if action.type is not None:
                    updates[action.dest] = action.type(raw)
                elif isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                    updates[action.dest] = raw.lower() in ("1", "true", "yes", "on")
                else:
                    updates[action.dest] = raw
        if updates:
            parser.set_defaults(**updates)


def _build_parsers() -> tuple[argparse.ArgumentParser, list[argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="distracteval",
        description="Evaluate answering methods on math problems carrying irrelevant information.",
    )
    parser.add_argument("--server", help="base URL of a running service; default runs in-process")
    parser.add_argument("--config", help="key=value file providing flag defaults")
    commands = parser.add_subparsers(dest="command", required=True)

    generate = commands.add_parser("generate", help="perturb a clean corpus with distractors")
    generate.add_argument("--corpus", required=True, help="source corpus JSONL (id/question/answer)")
    generate.add_argument("--out", required=True, help="output perturbed corpus JSONL")
    generate.add_argument("--templates", help="template JSONL; defaults to the built-in set")
    generate.add_argument("--seed", type=int, default=0)
    generate.add_argument(
        "--position",
        type=_position,
        default=0,
        help="sentence index for insertion, or 'shuffle' for a seeded random position",
    )
    generate.add_argument("--count", type=int, help="limit to the first N problems")

    run = commands.add_parser("run", help="run one method over a corpus")
    run.add_argument("--corpus", required=True)
    run.add_argument(
        "--corpus-format",
        choices=("jsonl_gsm8k", "jsonl_gsmir"),
        default="jsonl_gsmir",
    )
    run.add_argument("--method", required=True, choices=METHOD_CHOICES)
    run.add_argument("--downstream", choices=("sp", "cot", "0cot", "ltm", "ip"))
    run.add_argument("--backend", choices=("live", "replay", "record"), default="replay")
    run.add_argument("--cache", help="completion cache JSONL (required for replay/record)")
    run.add_argument("--out", help="run directory for results.jsonl and manifest.json")
    run.add_argument("--model", default="default")
    run.add_argument("--temperature", type=float, default=0.0)
    run.add_argument("--max-tokens", type=int, default=512)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--id-threshold", type=float, default=0.6)
    run.add_argument("--max-in-flight", type=int, default=4)
    run.add_argument("--ip-instruction", help="override the ignore-irrelevance instruction")
    run.add_argument("--ltm-two-call", action="store_true")
    run.add_argument("--demos", help="demonstration fixture JSONL")
    run.add_argument("--atf-demos", help="analysis demo fixture JSONL")
    run.add_argument("--atf-shuffle-seed", type=int, help="seed for demo distractor relocation")

    analyze = commands.add_parser("analyze", help="compute metrics from a run directory")
    analyze.add_argument("--run-dir", required=True)
    analyze.add_argument("--out", help="write the metrics JSON here")

    report = commands.add_parser("report", help="render a metrics JSON file")
    report.add_argument("--metrics", required=True)
    report.add_argument(
        "--format", choices=[f.value for f in ReportFormat], default=ReportFormat.MARKDOWN.value
    )
    report.add_argument("--out", help="write the rendered report here")

    cache = commands.add_parser("cache", help="completion cache operations")
    cache_commands = cache.add_subparsers(dest="cache_command", required=True)
    cache_verify = cache_commands.add_parser("verify", help="check a cache file's integrity")
    cache_verify.add_argument("--cache", required=True)

    return parser, [generate, run, analyze, report, cache_verify]


async def _in_process_request(method: str, path: str, payload: dict | None) -> httpx.Response:
    from .service import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(
        transport=transport, base_url="http://service", timeout=600.0
    ) as client:
        return await client.request(method, path, json=payload)


def _request(server: str | None, method: str, path: str, payload: dict | None) -> httpx.Response:
    if server:
        with httpx.Client(base_url=server, timeout=600.0) as client:
            return client.request(method, path, json=payload)
    return asyncio.run(_in_process_request(method, path, payload))


def _drop_none(payload: dict) -> dict:
    return {key: value for key, value in payload.items() if value is not None}


def _print_response(response: httpx.Response, *, text_key: str | None = None) -> int:
    try:
        body = response.json()
    except ValueError:
        print(response.text, file=sys.stderr)
        return 1
    if response.status_code >= 300:
        detail = body.get("detail", body) if isinstance(body, dict) else body
        print(f"error: {detail}", file=sys.stderr)
        return 1
    if text_key is not None and isinstance(body, dict) and text_key in body:
        print(body[text_key], end="")
    else:
        print(json.dumps(body, indent=2, sort_keys=True))
    return 0


def main(argv: "list[str] | None" = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    prescan = argparse.ArgumentParser(add_help=False)
    prescan.add_argument("--config")
    known, _ = prescan.parse_known_args(argv)

    parser, subparsers = _build_parsers()
    if known.config:
        try:
            config = _load_config(known.config)
        except (OSError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        _apply_config([parser] + subparsers, config)
    args = parser.parse_args(argv)

    if args.command == "generate":
        payload = _drop_none(
            {
                "source_path": args.corpus,
                "out_path": args.out,
                "templates_path": args.templates,
                "seed": args.seed,
                "position": args.position,
                "count": args.count,
            }
        )
        return _print_response(_request(args.server, "POST", "/corpus/generate", payload))

    if args.command == "run":
        payload = _drop_none(
            {
                "corpus_path": args.corpus,
                "corpus_format": args.corpus_format,
                "method": args.method,
                "downstream": args.downstream,
                "backend": args.backend,
                "cache_path": args.cache,
                "out_dir": args.out,
                "model_name": args.model,
                "temperature": args.temperature,
                "max_tokens": args.max_tokens,
                "seed": args.seed,
                "id_threshold": args.id_threshold,
                "max_in_flight": args.max_in_flight,
                "ip_instruction": args.ip_instruction,
                "ltm_two_call": args.ltm_two_call or None,
                "demo_fixture": args.demos,
                "analysis_demo_fixture": args.atf_demos,
                "shuffle_seed": args.atf_shuffle_seed,
            }
        )
        return _print_response(_request(args.server, "POST", "/runs", payload))

    if args.command == "analyze":
        payload = _drop_none({"run_dir": args.run_dir, "out_path": args.out})
        return _print_response(_request(args.server, "POST", "/analyze", payload))

    if args.command == "report":
        payload = _drop_none(
            {"metrics_path": args.metrics, "format": args.format, "out_path": args.out}
        )
        return _print_response(
            _request(args.server, "POST", "/report", payload), text_key="content"
        )

    if args.command == "cache" and args.cache_command == "verify":
        response = _request(args.server, "POST", "/cache/verify", {"cache_path": args.cache})
        try:
            body = response.json()
        except ValueError:
            print(response.text, file=sys.stderr)
            return 1
        if response.status_code >= 300:
            print(f"error: {body.get('detail', body)}", file=sys.stderr)
            return 1
        if body["ok"]:
            print(f"ok: {body['entry_count']} entries")
            return 0
        for issue in body["issues"]:
            print(f"issue: {issue}", file=sys.stderr)
        return 1

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    raise SystemExit(main())
