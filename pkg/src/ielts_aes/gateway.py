"""LLM gateway: completion backends, request fingerprinting, the on-disk
response cache, and token-cost accounting.

The scripted backend replays fixture completions keyed by request fingerprint
(or prompt regex), which is what makes fully offline deterministic runs and
the replay cache possible.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import tempfile
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import requests

log = logging.getLogger(__name__)


class BackendError(RuntimeError):
    """Gateway failure. kinds: transport, auth, rate-limit-exhausted, fixture-miss."""

    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}" if detail else kind)


class FixtureMissError(BackendError):
    def __init__(self, fingerprint: str):
        super().__init__("fixture-miss", f"no fixture for fingerprint {fingerprint}")
        self.fingerprint = fingerprint


@dataclass(frozen=True)
class GenerationRequest:
    """One completion request: rendered prompt plus decode parameters."""

    prompt: str
    model: str
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = 0
    backend: str = ""  # routing only; not part of the fingerprint

    def __post_init__(self) -> None:
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Completion:
    """One completion with usage accounting."""

    text: str
    finish_reason: str = "stop"
    prompt_tokens: int = 0
    output_tokens: int = 0
    latency_s: float = 0.0

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")


def fingerprint(request: GenerationRequest) -> str:
    """Stable hash of (prompt bytes, model, temperature, max length, seed)."""
    payload = json.dumps(
        {
            "prompt": request.prompt,
            "model": request.model,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "seed": request.seed,
        },
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class LlmBackend(Protocol):
    id: str

    def complete(self, request: GenerationRequest) -> Completion: ...


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


class ScriptedBackend:
    """Deterministic stand-in for a remote model.

    Fixture entries are JSONL objects of either
    ``{"fingerprint": ..., "completion": ...}`` or
    ``{"prompt_regex": ..., "completion": ...}``; fingerprint entries win,
    regex entries are tried in file order against the prompt.
    """

    def __init__(
        self, entries: Iterable[dict] = (), backend_id: str = "scripted", model: str = ""
    ):
        self.id = backend_id
        self.model = model
        self._by_fingerprint: dict[str, str] = {}
        self._by_regex: list[tuple[re.Pattern[str], str]] = []
        for entry in entries:
            self.add(entry)
        self._lock = threading.Lock()
        self.call_log: list[str] = []
        self._in_flight = 0
        self.peak_in_flight = 0

    @classmethod
    def from_file(
        cls, path: str | Path, backend_id: str = "scripted", model: str = ""
    ) -> "ScriptedBackend":
        entries = []
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                line = line.strip()
                if line:
                    entries.append(json.loads(line))
        return cls(entries, backend_id=backend_id, model=model)

    def add(self, entry: dict) -> None:
        completion = entry["completion"]
        if "fingerprint" in entry:
            self._by_fingerprint[entry["fingerprint"]] = completion
        elif "prompt_regex" in entry:
            self._by_regex.append((re.compile(entry["prompt_regex"], re.DOTALL), completion))
        else:
            raise ValueError("fixture entry needs 'fingerprint' or 'prompt_regex'")

    def register(self, request: GenerationRequest, completion_text: str) -> None:
        self._by_fingerprint[fingerprint(request)] = completion_text

    def reset_call_log(self) -> None:
        with self._lock:
            self.call_log.clear()
            self.peak_in_flight = 0

    def complete(self, request: GenerationRequest) -> Completion:
        key = fingerprint(request)
        with self._lock:
            self.call_log.append(key)
            self._in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self._in_flight)
        try:
            text = self._by_fingerprint.get(key)
            if text is None:
                for pattern, candidate in self._by_regex:
                    if pattern.search(request.prompt):
                        text = candidate
                        break
            if text is None:
                raise FixtureMissError(key)
            return Completion(
                text=text,
                finish_reason="stop",
                prompt_tokens=_whitespace_tokens(request.prompt),
                output_tokens=_whitespace_tokens(text),
                latency_s=0.0,
            )
        finally:
            with self._lock:
                self._in_flight -= 1


_TRANSIENT_STATUSES = {429, 500, 502, 503, 504}


class OpenAIBackend:
    """OpenAI-compatible chat-completions client with bounded backoff retry."""

    def __init__(
        self,
        base_url: str,
        model: str,
        backend_id: str = "openai",
        api_key_env: str | None = None,
        timeout_s: float = 120.0,
        max_retries: int = 4,
        session: requests.Session | None = None,
    ):
        self.id = backend_id
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self._session = session or requests.Session()

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: GenerationRequest) -> Completion:
        payload: dict = {
            "model": request.model or self.model,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            payload["seed"] = request.seed
        url = f"{self.base_url}/chat/completions"
        last_detail = ""
        for attempt in range(self.max_retries + 1):
            started = time.monotonic()
            try:
                response = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.timeout_s
                )
            except requests.RequestException as exc:
                last_detail = str(exc)
                log.warning("transport error (attempt %d): %s", attempt + 1, exc)
            else:
                if response.status_code in (401, 403):
                    raise BackendError("auth", f"HTTP {response.status_code}")
                if response.ok:
                    return self._parse(response.json(), time.monotonic() - started)
                last_detail = f"HTTP {response.status_code}: {response.text[:200]}"
                if response.status_code not in _TRANSIENT_STATUSES:
                    raise BackendError("transport", last_detail)
                log.warning("transient failure (attempt %d): %s", attempt + 1, last_detail)
            if attempt < self.max_retries:
                time.sleep(min(2.0**attempt, 30.0) + random.uniform(0, 0.1))
        if "429" in last_detail:
            raise BackendError("rate-limit-exhausted", last_detail)
        raise BackendError("transport", f"retries exhausted: {last_detail}")

    @staticmethod
    def _parse(data: dict, latency_s: float) -> Completion:
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError("transport", f"malformed response: {exc}") from exc
        usage = data.get("usage") or {}
        return Completion(
            text=text or "",
            finish_reason=choice.get("finish_reason", "stop"),
            prompt_tokens=int(usage.get("prompt_tokens", 0)),
            output_tokens=int(usage.get("completion_tokens", 0)),
            latency_s=latency_s,
        )


class ResponseCache:
    """One JSON file per fingerprint, holding request and completion.

    Reads are lock-free; writes go through a temp file + atomic replace under
    a lock, so concurrent scoring tasks never observe torn entries.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> Completion | None:
        path = self._path(key)
        if not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        entry = data["completion"]
        return Completion(
            text=entry["text"],
            finish_reason=entry.get("finish_reason", "stop"),
            prompt_tokens=entry.get("prompt_tokens", 0),
            output_tokens=entry.get("output_tokens", 0),
            latency_s=entry.get("latency_s", 0.0),
        )

    def put(self, key: str, request: GenerationRequest, completion: Completion) -> None:
        record = {
            "fingerprint": key,
            "request": {
                "prompt": request.prompt,
                "model": request.model,
                "temperature": request.temperature,
                "max_tokens": request.max_tokens,
                "seed": request.seed,
                "backend": request.backend,
            },
            "completion": {
                "text": completion.text,
                "finish_reason": completion.finish_reason,
                "prompt_tokens": completion.prompt_tokens,
                "output_tokens": completion.output_tokens,
                "latency_s": completion.latency_s,
            },
        }
        with self._write_lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            try:
                with os.fdopen(fd, "w", encoding="utf-8") as handle:
                    json.dump(record, handle, ensure_ascii=False, sort_keys=True)
                os.replace(tmp, self._path(key))
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise


class CachingBackend:
    """Backend wrapper that serves cached completions and records hit counts."""

    def __init__(self, inner: LlmBackend, cache: ResponseCache):
        self.inner = inner
        self.id = inner.id
        self.model = getattr(inner, "model", "")
        self.cache = cache
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def complete(self, request: GenerationRequest) -> Completion:
        key = fingerprint(request)
        cached = self.cache.get(key)
        if cached is not None:
            with self._lock:
                self.hits += 1
            return cached
        completion = self.inner.complete(request)
        self.cache.put(key, request, completion)
        with self._lock:
            self.misses += 1
        return completion


class UnknownModelError(KeyError):
    pass


@dataclass(frozen=True)
class ModelPricing:
    """Per-1k-token rates for one model."""

    prompt_per_1k: float = 0.0
    output_per_1k: float = 0.0


@dataclass(frozen=True)
class CallUsage:
    model: str
    prompt_tokens: int
    output_tokens: int
    latency_s: float = 0.0


@dataclass(frozen=True)
class CostRecord:
    prompt_tokens: int = 0
    output_tokens: int = 0
    amount: float = 0.0
    wall_clock_s: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.output_tokens


def estimate_cost(usages: Iterable[CallUsage], pricing: dict[str, ModelPricing]) -> CostRecord:
    """Linear token-cost accumulation over a run's calls."""
    prompt_tokens = 0
    output_tokens = 0
    amount = 0.0
    wall = 0.0
    for usage in usages:
        if usage.model not in pricing:
            raise UnknownModelError(usage.model)
        rates = pricing[usage.model]
        prompt_tokens += usage.prompt_tokens
        output_tokens += usage.output_tokens
        amount += (
            usage.prompt_tokens / 1000.0 * rates.prompt_per_1k
            + usage.output_tokens / 1000.0 * rates.output_per_1k
        )
        wall += usage.latency_s
    return CostRecord(
        prompt_tokens=prompt_tokens,
        output_tokens=output_tokens,
        amount=amount,
        wall_clock_s=wall,
    )
