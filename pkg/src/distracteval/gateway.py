"""Model gateway: prompt bundles, completion backends, and a replayable cache.

Every evaluation call flows through a Backend. The cache is content-addressed
(sha256 over the canonical JSON of the prompt bundle's semantic fields) and
append-only JSONL, so a recorded run can be replayed byte-identically with
zero network traffic.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import httpx

ENDPOINT_ENV_VAR = "DISTRACTEVAL_ENDPOINT"
API_KEY_ENV_VAR = "DISTRACTEVAL_API_KEY"
MODEL_ENV_VAR = "DISTRACTEVAL_MODEL"

_RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


class GatewayError(RuntimeError):
    """Base class for gateway failures."""


class AuthenticationError(GatewayError):
    """The endpoint rejected the credentials; retrying cannot help."""


class ProtocolError(GatewayError):
    """The endpoint replied with a payload the chat-completion shape does not allow."""


class NetworkForbiddenError(GatewayError):
    """A backend that must not touch the network was asked to complete a prompt."""


class ReplayMissError(GatewayError):
    """Strict replay was asked for a prompt that was never recorded."""

    def __init__(self, key: str, preview: str) -> None:
        super().__init__(f"no cached completion for key {key} (prompt starts: {preview!r})")
        self.key = key
        self.preview = preview


class CacheVerificationError(GatewayError):
    """A cache file failed integrity verification."""


class MessageRole(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class FinishReason(str, Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class ChatMessage:
    role: MessageRole
    content: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "role", MessageRole(self.role))
        if self.role is not MessageRole.SYSTEM and not self.content:
            raise ValueError(f"{self.role.value} message content must be non-empty")


@dataclass(frozen=True)
class PromptBundle:
    """Everything that determines a completion, and therefore the cache key."""

    messages: tuple[ChatMessage, ...]
    model_name: str
    temperature: float = 0.0
    max_tokens: int = 512
    stop_sequences: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stop_sequences", tuple(self.stop_sequences))
        if not any(m.role is MessageRole.USER for m in self.messages):
            raise ValueError("prompt bundle must contain at least one user message")
        if not self.model_name:
            raise ValueError("model_name must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens {self.max_tokens} must be positive")

    def first_user_content(self) -> str:
        for message in self.messages:
            if message.role is MessageRole.USER:
                return message.content
        raise ValueError("no user message")  # unreachable per __post_init__


@dataclass(frozen=True)
class Completion:
    text: str
    finish_reason: FinishReason = FinishReason.STOP
    usage_tokens: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "finish_reason", FinishReason(self.finish_reason))


def _bundle_digest_fields(bundle: PromptBundle) -> dict:
    return {
        "messages": [{"role": m.role.value, "content": m.content} for m in bundle.messages],
        "model_name": bundle.model_name,
        "temperature": bundle.temperature,
        "max_tokens": bundle.max_tokens,
        "stop_sequences": list(bundle.stop_sequences),
    }


def _digest_of_fields(fields: dict) -> str:
    canonical = json.dumps(fields, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def cache_key(bundle: PromptBundle) -> str:
    """Content address of a prompt bundle: sha256 over its canonical JSON."""
    return _digest_of_fields(_bundle_digest_fields(bundle))


class CompletionCache:
    """Append-only JSONL store of completions, addressed by bundle digest.

    Rows hold the key, the digest fields that produced it, the completion,
    and a recorded_at timestamp for audit; readers ignore unknown fields.
    """

    def __init__(self, path: str | Path | None = None) -> None:
        self.path = Path(path) if path is not None else None
        self._entries: dict[str, Completion] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with self.path.open(encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                row = json.loads(line)
                completion = Completion(
                    text=row["completion"]["text"],
                    finish_reason=FinishReason(row["completion"]["finish_reason"]),
                )
                self._entries[row["key"]] = completion

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> Completion | None:
        return self._entries.get(key)

    def put(self, bundle: PromptBundle, completion: Completion) -> str:
        key = cache_key(bundle)
        with self._lock:
            already = self._entries.get(key)
            self._entries[key] = completion
            if self.path is not None and already is None:
                row = {
                    "key": key,
                    "bundle_digest_fields": _bundle_digest_fields(bundle),
                    "completion": {
                        "text": completion.text,
                        "finish_reason": completion.finish_reason.value,
                    },
                    "recorded_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                }
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    handle.write(json.dumps(row, ensure_ascii=False) + "\n")
        return key

    @classmethod
    def verify_file(cls, path: str | Path) -> list[str]:
        """Check a cache file's integrity; return a list of issue descriptions.

        Verifies JSON well-formedness, required keys, agreement between each
        stored key and the digest recomputed from its bundle fields, known
        finish reasons, and that duplicate keys agree on their text.
        """
        path = Path(path)
        issues: list[str] = []
        seen: dict[str, str] = {}
        with path.open(encoding="utf-8") as handle:
            for line_no, line in enumerate(handle, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    issues.append(f"line {line_no}: invalid JSON ({exc.msg})")
                    continue
                missing = [k for k in ("key", "bundle_digest_fields", "completion") if k not in row]
                if missing:
                    issues.append(f"line {line_no}: missing keys {missing}")
                    continue
                recomputed = _digest_of_fields(row["bundle_digest_fields"])
                if recomputed != row["key"]:
                    issues.append(
                        f"line {line_no}: key {row['key']} does not match digest {recomputed}"
                    )
                completion = row["completion"]
                if not isinstance(completion, dict) or "text" not in completion:
                    issues.append(f"line {line_no}: completion missing text")
                    continue
                reason = completion.get("finish_reason", FinishReason.STOP.value)
                if reason not in {r.value for r in FinishReason}:
                    issues.append(f"line {line_no}: unknown finish_reason {reason!r}")
                previous = seen.get(row["key"])
                if previous is not None and previous != completion["text"]:
                    issues.append(f"line {line_no}: duplicate key {row['key']} with differing text")
                seen.setdefault(row["key"], completion["text"])
        return issues


class Backend(ABC):
    """Turns a prompt bundle into a completion."""

    @abstractmethod
    def complete(self, bundle: PromptBundle) -> Completion: ...


class ScriptedBackend(Backend):
    """Backend driven by a callable; used for tests and scripted oracles.

    Records every bundle it sees so tests can assert call counts and stage
    ordering.
    """

    def __init__(self, script: Callable[[PromptBundle], "Completion | str"]) -> None:
        self._script = script
        self._lock = threading.Lock()
        self.calls: list[PromptBundle] = []

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def complete(self, bundle: PromptBundle) -> Completion:
        with self._lock:
            self.calls.append(bundle)
        result = self._script(bundle)
        if isinstance(result, Completion):
            return result
        return Completion(text=result)


class ForbidNetworkBackend(Backend):
    """Fails loudly on any completion attempt; proves a replay run is offline."""

    def complete(self, bundle: PromptBundle) -> Completion:
        raise NetworkForbiddenError(
            f"network access is forbidden; missing completion for key {cache_key(bundle)}"
        )


class LiveBackend(Backend):
    """HTTP chat-completion client with exponential backoff.

    Retries transport errors, 429, and 5xx with doubling delay; 401/403 raise
    immediately as AuthenticationError and other 4xx as ProtocolError.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        *,
        timeout: float = 60.0,
        max_retries: int = 5,
        backoff_base: float = 0.5,
        transport: "httpx.BaseTransport | None" = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not endpoint:
            raise ValueError("endpoint must be non-empty")
        self.endpoint = endpoint
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> "LiveBackend":
        endpoint = os.environ.get(ENDPOINT_ENV_VAR, "")
        if not endpoint:
            raise GatewayError(f"{ENDPOINT_ENV_VAR} is not set; cannot build a live backend")
        return cls(endpoint, api_key=os.environ.get(API_KEY_ENV_VAR, ""), **kwargs)

    def close(self) -> None:
        self._client.close()

    def _request_payload(self, bundle: PromptBundle) -> dict:
        payload = {
            "model": bundle.model_name,
            "messages": [
                {"role": m.role.value, "content": m.content} for m in bundle.messages
            ],
            "temperature": bundle.temperature,
            "max_tokens": bundle.max_tokens,
        }
        if bundle.stop_sequences:
            payload["stop"] = list(bundle.stop_sequences)
        return payload

    @staticmethod
    def _parse_response(payload: dict) -> Completion:
        try:
            choice = payload["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProtocolError(f"malformed chat-completion response: {exc!r}") from exc
        raw_reason = choice.get("finish_reason", "stop")
        reason = FinishReason(raw_reason) if raw_reason in {r.value for r in FinishReason} else FinishReason.STOP
        usage = payload.get("usage", {})
        tokens = usage.get("total_tokens", 0) if isinstance(usage, dict) else 0
        return Completion(text=text, finish_reason=reason, usage_tokens=int(tokens))

    def complete(self, bundle: PromptBundle) -> Completion:
        delay = self.backoff_base
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(delay)
                delay *= 2
            try:
                response = self._client.post(self.endpoint, json=self._request_payload(bundle))
            except httpx.TransportError as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise AuthenticationError(
                    f"endpoint rejected credentials with status {response.status_code}"
                )
            if response.status_code in _RETRYABLE_STATUS:
                last_error = GatewayError(f"status {response.status_code}: {response.text[:200]}")
                continue
            if response.status_code >= 400:
                raise ProtocolError(f"status {response.status_code}: {response.text[:200]}")
            try:
                payload = response.json()
            except ValueError as exc:
                raise ProtocolError(f"non-JSON response: {exc}") from exc
            return self._parse_response(payload)
        raise GatewayError(
            f"giving up after {self.max_retries + 1} attempts: {last_error}"
        ) from last_error


class ReplayBackend(Backend):
    """Serves completions from a cache.

    Strict mode raises :class:`ReplayMissError` on any uncached prompt. With a
    delegate (record mode), misses fall through to the delegate and the result
    is appended to the cache.
    """

    def __init__(
        self,
        cache: CompletionCache,
        *,
        strict: bool = True,
        delegate: Backend | None = None,
    ) -> None:
        if not strict and delegate is None:
            raise ValueError("non-strict replay requires a delegate backend")
        self.cache = cache
        self.strict = strict
        self.delegate = delegate

    def complete(self, bundle: PromptBundle) -> Completion:
        key = cache_key(bundle)
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        if self.strict or self.delegate is None:
            raise ReplayMissError(key, bundle.first_user_content()[:80])
        completion = self.delegate.complete(bundle)
        self.cache.put(bundle, completion)
        return completion


def make_backend(
    mode: str,
    cache_path: str | Path | None = None,
    *,
    live: Backend | None = None,
) -> Backend:
    """Build a backend for one of the CLI modes: live, replay, or record.

    replay requires a cache path; record wraps the live backend (built from
    the environment when not supplied) so every completion is persisted.
    """
    if mode == "live":
        return live if live is not None else LiveBackend.from_env()
    if mode == "replay":
        if cache_path is None:
            raise ValueError("replay mode requires a cache path")
        return ReplayBackend(CompletionCache(cache_path), strict=True)
    if mode == "record":
        if cache_path is None:
            raise ValueError("record mode requires a cache path")
        delegate = live if live is not None else LiveBackend.from_env()
        return ReplayBackend(CompletionCache(cache_path), strict=False, delegate=delegate)
    raise ValueError(f"unknown backend mode {mode!r}; expected live, replay, or record")


def complete(bundle: PromptBundle, backend: Backend) -> Completion:
    return backend.complete(bundle)


def complete_batch(
    bundles: Sequence[PromptBundle],
    backend: Backend,
    max_in_flight: int = 4,
) -> list[Completion]:
    """Complete a batch concurrently, preserving positional alignment.

    A failed item becomes a Completion with finish_reason ERROR and the
    exception rendered into its text; one failure never poisons the batch.
    """
    if max_in_flight < 1:
        raise ValueError(f"max_in_flight {max_in_flight} must be positive")
    if not bundles:
        return []

    def run_one(bundle: PromptBundle) -> Completion:
        try:
            return backend.complete(bundle)
        except Exception as exc:
            return Completion(
                text=f"{type(exc).__name__}: {exc}", finish_reason=FinishReason.ERROR
            )

    with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        return list(pool.map(run_one, bundles))
