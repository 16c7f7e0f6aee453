"""Provider-neutral chat completion with mocking and a content-addressed cache."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import tempfile
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Literal, Optional, Sequence

import httpx

from .errors import CacheIoError, FixtureMiss, HttpError, ProtocolError, Timeout

log = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")
_THINK_RE = re.compile(r"^\s*<think>(.*?)</think>\s*", re.DOTALL)


@dataclass(frozen=True)
class Message:
    role: str
    content: str

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"bad message role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 1024
    seed_hint: Optional[int] = None

    def __post_init__(self):
        msgs = tuple(m if isinstance(m, Message) else Message(*m) for m in self.messages)
        object.__setattr__(self, "messages", msgs)
        object.__setattr__(self, "temperature", float(self.temperature))
        if not msgs:
            raise ValueError("request needs at least one message")
        if msgs[0].role not in ("system", "user"):
            raise ValueError("first message must be system or user")
        if not math.isfinite(self.temperature) or not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be finite and in [0, 2]")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    def body(self) -> dict:
        """The chat-completions wire body, fields in documented order."""
        return {
            "model": self.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    def canonical_bytes(self) -> bytes:
        return json.dumps(self.body(), ensure_ascii=False, separators=(",", ":")).encode("utf-8")


def canonical_request_hash(request: ChatRequest) -> str:
    return hashlib.sha256(request.canonical_bytes()).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    content: str
    model_id: str
    reasoning_trace: Optional[str] = None
    cached: bool = False
    latency_ms: int = 0


@dataclass(frozen=True)
class ProviderSpec:
    kind: Literal["remote", "mock"]
    model_id: str
    base_url: Optional[str] = None
    request_timeout_s: float = 120.0
    max_retries: int = 3
    max_tokens: int = 1024
    fixture_dir: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("remote", "mock"):
            raise ValueError(f"unknown provider kind {self.kind!r}")
        if self.kind == "remote" and not self.base_url:
            raise ValueError("remote provider requires base_url")


def split_think(raw: str) -> tuple[str, Optional[str]]:
    """Strip a leading ``<think>...</think>`` block; return (content, trace)."""
    m = _THINK_RE.match(raw)
    if not m:
        # unterminated or stray tags must never leak downstream
        return raw.replace("<think>", "").replace("</think>", "").strip(), None
    rest = raw[m.end():].replace("<think>", "").replace("</think>", "")
    return rest.strip(), m.group(1).strip()


def parse_chat_body(data: dict) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise ProtocolError(f"response has no choices[0].message.content: {e!r}") from None
    if not isinstance(content, str):
        raise ProtocolError("message content is not a string")
    return content


class RemoteBackend:
    """OpenAI-compatible ``/v1/chat/completions`` client with retry/backoff."""

    backoff_base = 1.0
    backoff_factor = 2.0

    def __init__(self, spec: ProviderSpec, transport: httpx.BaseTransport | None = None,
                 sleep: Callable[[float], None] = time.sleep, api_key: str | None = None):
        self.spec = spec
        self.sleep = sleep
        key = api_key if api_key is not None else os.environ.get("DRP_API_KEY", "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        self._client = httpx.Client(timeout=spec.request_timeout_s, headers=headers, transport=transport)
        self.url = f"{spec.base_url.rstrip('/')}/v1/chat/completions"

    def __call__(self, request: ChatRequest) -> tuple[str, Optional[str]]:
        last: Exception | None = None
        for attempt in range(self.spec.max_retries + 1):
            if attempt:
                delay = self.backoff_base * self.backoff_factor ** (attempt - 1)
                log.warning("retrying %s in %.1fs (%s)", self.url, delay, last)
                self.sleep(delay)
            try:
                resp = self._client.post(
                    self.url, content=request.canonical_bytes(),
                    headers={"Content-Type": "application/json"},
                )
            except httpx.TimeoutException as e:
                last = Timeout(f"request timed out: {e}")
                continue
            except httpx.TransportError as e:
                last = HttpError(0, f"transport error: {e}")
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last = HttpError(resp.status_code, resp.text)
                continue
            if resp.status_code != 200:
                raise HttpError(resp.status_code, resp.text)
            try:
                data = resp.json()
            except ValueError:
                raise ProtocolError("response body is not JSON") from None
            return parse_chat_body(data), None
        assert last is not None
        raise last


class MockBackend:
    """Offline backend: digest-keyed fixture files, then an ordered script, then a responder.

    Fixture files are ``<digest>.json`` holding ``{"content", "reasoning_trace"}``.
    The optional script is ``script.json``: a JSON list of such objects (or
    plain strings), consumed in order by requests that have no digest file.
    """

    SCRIPT_NAME = "script.json"

    def __init__(self, fixture_dir: str | Path | None = None,
                 responder: Callable[[ChatRequest], str] | None = None,
                 script: Sequence | None = None):
        self.fixture_dir = Path(fixture_dir) if fixture_dir else None
        self.responder = responder
        self._lock = threading.Lock()
        if script is None and self.fixture_dir and (self.fixture_dir / self.SCRIPT_NAME).exists():
            script = json.loads((self.fixture_dir / self.SCRIPT_NAME).read_text(encoding="utf-8"))
        self._script = list(script or [])
        self._pos = 0

    @staticmethod
    def _entry(obj) -> tuple[str, Optional[str]]:
        if isinstance(obj, str):
            return obj, None
        return obj["content"], obj.get("reasoning_trace")

    def __call__(self, request: ChatRequest) -> tuple[str, Optional[str]]:
        digest = canonical_request_hash(request)
        if self.fixture_dir is not None:
            path = self.fixture_dir / f"{digest}.json"
            if path.exists():
                return self._entry(json.loads(path.read_text(encoding="utf-8")))
        with self._lock:
            if self._pos < len(self._script):
                self._pos += 1
                return self._entry(self._script[self._pos - 1])
        if self.responder is not None:
            return self.responder(request), None
        raise FixtureMiss(f"no mock fixture for request {digest}")


class ResponseCache:
    """One JSON file per request digest, written atomically via temp+rename."""

    def __init__(self, cache_dir: str | Path):
        self.dir = Path(cache_dir)

    def path(self, digest: str) -> Path:
        return self.dir / f"{digest}.json"

    def get(self, digest: str) -> Optional[dict]:
        try:
            return json.loads(self.path(digest).read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as e:
            log.warning("ignoring unreadable cache entry %s: %s", digest, e)
            return None

    def put(self, digest: str, entry: dict) -> None:
        try:
            self.dir.mkdir(parents=True, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=self.dir, prefix=f".{digest[:16]}.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as f:
                json.dump(entry, f, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, self.path(digest))
        except OSError as e:
            raise CacheIoError(f"cannot write cache entry {digest}: {e}") from e


def _finish(raw: str, trace: Optional[str], model_id: str, t0: float) -> ChatResponse:
    content, think = split_think(raw)
    if trace is None:
        trace = think
    if not content:
        raise ProtocolError("empty completion content")
    return ChatResponse(content, model_id, trace, False, int((time.perf_counter() - t0) * 1000))


@dataclass
class Gateway:
    """Owns backends, cache and concurrency limit for every LLM role.

    ``responder`` (mock kind only) answers requests that have no fixture.
    ``stats`` counts logical calls, provider calls and cache hits per label.
    """

    cache_dir: Optional[str | Path] = None
    max_concurrency: int = 4
    responder: Optional[Callable[[ChatRequest], str]] = None
    transport: Optional[httpx.BaseTransport] = None
    sleep: Callable[[float], None] = time.sleep
    stats: dict[str, Counter] = field(default_factory=lambda: {
        "calls": Counter(), "provider_calls": Counter(), "cache_hits": Counter()})

    def __post_init__(self):
        self._sem = threading.BoundedSemaphore(max(1, self.max_concurrency))
        self._lock = threading.Lock()
        self._backends: dict[ProviderSpec, Callable] = {}
        self.cache = ResponseCache(self.cache_dir) if self.cache_dir else None

    def backend(self, spec: ProviderSpec):
        with self._lock:
            if spec not in self._backends:
                if spec.kind == "mock":
                    self._backends[spec] = MockBackend(spec.fixture_dir, self.responder)
                else:
                    self._backends[spec] = RemoteBackend(spec, self.transport, self.sleep)
            return self._backends[spec]

    def _count(self, name: str, label: str) -> None:
        with self._lock:
            self.stats[name][label] += 1

    def complete(self, request: ChatRequest, spec: ProviderSpec, label: str = "default") -> ChatResponse:
        backend = self.backend(spec)
        t0 = time.perf_counter()
        with self._sem:
            self._count("provider_calls", label)
            raw, trace = backend(request)
        return _finish(raw, trace, request.model_id, t0)

    def cached_complete(self, request: ChatRequest, spec: ProviderSpec, label: str = "default") -> ChatResponse:
        self._count("calls", label)
        if self.cache is None:
            return self.complete(request, spec, label)
        digest = canonical_request_hash(request)
        hit = self.cache.get(digest)
        if hit is not None:
            self._count("cache_hits", label)
            return ChatResponse(hit["content"], hit.get("model_id", request.model_id),
                                hit.get("reasoning_trace"), True, 0)
        resp = self.complete(request, spec, label)
        self.cache.put(digest, {"content": resp.content, "reasoning_trace": resp.reasoning_trace,
                                "model_id": resp.model_id})
        return resp

    def snapshot(self) -> dict[str, dict[str, int]]:
        with self._lock:
            return {k: dict(sorted(v.items())) for k, v in self.stats.items()}


def complete(request: ChatRequest, provider: ProviderSpec, **gateway_kw) -> ChatResponse:
    return Gateway(**gateway_kw).complete(request, provider)


def cached_complete(request: ChatRequest, provider: ProviderSpec, cache: str | Path,
                    **gateway_kw) -> ChatResponse:
    return Gateway(cache_dir=cache, **gateway_kw).cached_complete(request, provider)
