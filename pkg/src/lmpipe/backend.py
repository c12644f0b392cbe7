"""Text-in/completions-out backends.

The scripted backend is the offline oracle: a list of (matcher, responses)
entries drives every completion deterministically, so semantics tests never
touch a network. The HTTP backend talks to one OpenAI-compatible endpoint.
Both record every call in an append-only log, and both can be wrapped in a
response cache keyed on (backend id, prompt text, generation params).
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, NamedTuple, Optional, Sequence

DEFAULT_MAX_TOKENS = 500
DEFAULT_TEMPERATURE = 0.7

API_KEY_ENV = "LM_API_KEY"
API_BASE_ENV = "LM_API_BASE"

SCRIPT_VERSION = 1


class BackendError(RuntimeError):
    """Raised when a backend cannot produce completions."""

    def __init__(self, message: str, retryable: bool = False):
        super().__init__(message)
        self.retryable = retryable


class UnscriptedPromptError(BackendError):
    """A prompt reached the scripted backend without any matching entry."""

    def __init__(self, digest: str):
        super().__init__(f"unscripted prompt (digest {digest})")
        self.digest = digest


def stable_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class GenerationParams:
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    n: int = 1

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    def digest(self) -> str:
        return stable_digest(json.dumps(
            {"max_tokens": self.max_tokens, "temperature": self.temperature, "n": self.n},
            sort_keys=True,
        ))


@dataclass(frozen=True)
class CallRecord:
    backend_id: str
    prompt: str
    params: GenerationParams
    completions: tuple[str, ...]

    @property
    def prompt_digest(self) -> str:
        return stable_digest(self.prompt)


class CallLog:
    """Append-only, thread-safe record of backend calls."""

    def __init__(self) -> None:
        self._records: list[CallRecord] = []
        self._lock = threading.Lock()

    def append(self, record: CallRecord) -> None:
        with self._lock:
            self._records.append(record)

    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass
class ScriptEntry:
    """One matcher plus its response queue.

    Each matching call consumes the next response; once the queue runs out the
    last response repeats forever.
    """

    match: str
    responses: list[str]
    mode: str = "substring"
    _consumed: int = field(default=0, repr=False)

    def __post_init__(self) -> None:
        if not self.responses:
            raise ValueError("script entry needs at least one response")
        if self.mode not in ("substring", "exact"):
            raise ValueError(f"unknown matcher mode {self.mode!r}")

    def matches(self, prompt: str) -> bool:
        if self.mode == "exact":
            return prompt == self.match
        return self.match in prompt

    def next_response(self) -> str:
        idx = min(self._consumed, len(self.responses) - 1)
        self._consumed += 1
        return self.responses[idx]


class ScriptedBackend:
    """Deterministic backend: first declared matching entry wins."""

    def __init__(self, entries: Sequence[ScriptEntry], backend_id: str = "scripted"):
        self.backend_id = backend_id
        self.entries = list(entries)
        self.call_log = CallLog()
        self._lock = threading.Lock()

    def generate(self, prompt: str, params: GenerationParams = GenerationParams()) -> list[str]:
        if not prompt:
            raise BackendError("prompt must be nonempty")
        with self._lock:
            for entry in self.entries:
                if entry.matches(prompt):
                    completions = tuple(entry.next_response() for _ in range(params.n))
                    break
            else:
                raise UnscriptedPromptError(stable_digest(prompt))
        self.call_log.append(CallRecord(self.backend_id, prompt, params, completions))
        return list(completions)


def load_script(path: str | Path) -> list[ScriptEntry]:
    """Read a script file: {"version": 1, "entries": [{match, mode, responses}, ...]}."""
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    version = data.get("version")
    if version != SCRIPT_VERSION:
        raise ValueError(f"script version mismatch: file has {version}, supported is {SCRIPT_VERSION}")
    return [
        ScriptEntry(match=e["match"], responses=list(e["responses"]), mode=e.get("mode", "substring"))
        for e in data["entries"]
    ]


def save_script(entries: Sequence[ScriptEntry], path: str | Path) -> None:
    data = {
        "version": SCRIPT_VERSION,
        "entries": [
            {"match": e.match, "mode": e.mode, "responses": list(e.responses)} for e in entries
        ],
    }
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(data, handle, indent=2, ensure_ascii=False)
        handle.write("\n")


@dataclass(frozen=True)
class EndpointConfig:
    """Where and how to reach an OpenAI-compatible completions endpoint."""

    model: str
    api_base: Optional[str] = None
    timeout: float = 60.0

    def resolve_base(self) -> str:
        base = self.api_base or os.environ.get(API_BASE_ENV)
        if not base:
            raise BackendError(f"no endpoint URL: set {API_BASE_ENV} or configure api_base")
        return base.rstrip("/")


class HTTPBackend:
    """Live-LM mode against one OpenAI-compatible chat completions endpoint.

    The credential is read from the LM_API_KEY environment variable at call
    time. ``post`` is injectable for testing; it defaults to requests.post.
    """

    def __init__(self, config: EndpointConfig, post: Optional[Callable] = None, backend_id: str = "http"):
        self.config = config
        self.backend_id = backend_id
        self.call_log = CallLog()
        if post is None:
            import requests

            post = requests.post
        self._post = post

    def generate(self, prompt: str, params: GenerationParams = GenerationParams()) -> list[str]:
        if not prompt:
            raise BackendError("prompt must be nonempty")
        api_key = os.environ.get(API_KEY_ENV)
        if not api_key:
            raise BackendError(f"missing credential: set the {API_KEY_ENV} environment variable")
        url = self.config.resolve_base() + "/chat/completions"
        body = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "n": params.n,
        }
        try:
            response = self._post(
                url,
                json=body,
                headers={"Authorization": f"Bearer {api_key}"},
                timeout=self.config.timeout,
            )
        except Exception as exc:  # transport failure: retryable, never cached
            raise BackendError(f"transport error calling {url}: {exc}", retryable=True) from exc
        if response.status_code == 401:
            raise BackendError(
                f"credential rejected (401); check the {API_KEY_ENV} environment variable: "
                f"{response.text}"
            )
        if not 200 <= response.status_code < 300:
            raise BackendError(f"endpoint returned {response.status_code}: {response.text}")
        payload = response.json()
        choices = payload.get("choices", [])
        completions = []
        for choice in choices:
            message = choice.get("message") or {}
            completions.append(message.get("content") or choice.get("text") or "")
        if len(completions) != params.n:
            raise BackendError(
                f"endpoint returned {len(completions)} choices, expected {params.n}"
            )
        record = CallRecord(self.backend_id, prompt, params, tuple(completions))
        self.call_log.append(record)
        return completions


class CacheKey(NamedTuple):
    """Equal (backend, prompt, params) always produce an equal key."""

    backend_id: str
    prompt_digest: str
    params_digest: str


class CachingBackend:
    """Response cache in front of any backend. Errors are never cached."""

    def __init__(self, inner) -> None:
        self.inner = inner
        self._cache: dict[CacheKey, list[str]] = {}
        self._lock = threading.Lock()

    @property
    def backend_id(self) -> str:
        return self.inner.backend_id

    @property
    def call_log(self) -> CallLog:
        return self.inner.call_log

    def cache_key(self, prompt: str, params: GenerationParams) -> CacheKey:
        return CacheKey(self.inner.backend_id, stable_digest(prompt), params.digest())

    def generate(self, prompt: str, params: GenerationParams = GenerationParams()) -> list[str]:
        key = self.cache_key(prompt, params)
        with self._lock:
            if key in self._cache:
                return list(self._cache[key])
        completions = self.inner.generate(prompt, params)
        with self._lock:
            self._cache.setdefault(key, list(completions))
        return list(completions)
