"""Chat-completion client with disk cache, retries, rate limiting and batching.

The gateway is transport-agnostic. ``HttpTransport`` speaks the usual
chat-completions JSON shape; ``MockTransport`` and ``ReplayTransport`` give
deterministic behaviour for tests and dry runs.
"""

from __future__ import annotations

import base64
import collections
import hashlib
import json
import logging
import mimetypes
import os
import threading
import time
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Protocol, Sequence

from .errors import ToolkitError

logger = logging.getLogger(__name__)

API_KEY_ENV = "REASONDRIVE_API_KEY"
RETRYABLE_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    images: tuple[str, ...] = ()


def _file_digest(path: str) -> str:
    try:
        return "sha256:" + hashlib.sha256(Path(path).read_bytes()).hexdigest()
    except OSError:
        # Unreadable attachments still yield a stable key; the transport reports the failure.
        return "missing:" + hashlib.sha256(path.encode()).hexdigest()


@dataclass(frozen=True)
class CompletionRequest:
    model: str
    messages: tuple[Message, ...]
    temperature: float = 0.7
    max_tokens: int = 512
    # Distinguishes deliberate re-samples of the same prompt; 0 for the first draw.
    sample: int = 0

    @property
    def request_key(self) -> str:
        body: dict[str, Any] = {
            "model": self.model,
            "temperature": float(self.temperature),
            "messages": [
                {"role": m.role, "text": m.text, "images": [_file_digest(p) for p in m.images]}
                for m in self.messages
            ],
        }
        if self.sample:
            body["sample"] = self.sample
        canonical = json.dumps(body, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def resample(self, sample: int) -> "CompletionRequest":
        return CompletionRequest(self.model, self.messages, self.temperature, self.max_tokens, sample)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    usage: dict[str, int] = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})
    from_cache: bool = False
    # Network attempts made by this invocation; 0 for a cache hit.
    attempts: int = 1

    @property
    def total_tokens(self) -> int:
        return int(self.usage.get("prompt_tokens", 0)) + int(self.usage.get("completion_tokens", 0))


@dataclass(frozen=True)
class TransportResponse:
    status: int
    text: str = ""
    usage: dict[str, int] = field(default_factory=lambda: {"prompt_tokens": 0, "completion_tokens": 0})


class Transport(Protocol):
    def send(self, request: CompletionRequest) -> TransportResponse: ...


def build_payload(request: CompletionRequest) -> dict[str, Any]:
    """The JSON body POSTed to a chat-completions endpoint."""
    messages = []
    for m in request.messages:
        content: list[dict[str, Any]] = [{"type": "text", "text": m.text}]
        for path in m.images:
            mime = mimetypes.guess_type(path)[0] or "application/octet-stream"
            data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
            content.append({"type": "image_url", "image_url": {"url": f"data:{mime};base64,{data}"}})
        messages.append({"role": m.role, "content": content})
    return {
        "model": request.model,
        "messages": messages,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }


def parse_response_body(body: dict[str, Any]) -> TransportResponse:
    try:
        text = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ToolkitError("TRANSPORT_ERROR", "response has no choices[0].message.content") from None
    if isinstance(text, list):  # some servers echo content parts
        text = "".join(part.get("text", "") for part in text if isinstance(part, dict))
    usage = body.get("usage") or {}
    return TransportResponse(
        200,
        text or "",
        {
            "prompt_tokens": int(usage.get("prompt_tokens", 0)),
            "completion_tokens": int(usage.get("completion_tokens", 0)),
        },
    )


class HttpTransport:
    def __init__(self, url: str, api_key: str | None = None, timeout: float = 120.0) -> None:
        self.url = url
        self.api_key = api_key
        self.timeout = timeout

    def send(self, request: CompletionRequest) -> TransportResponse:
        data = json.dumps(build_payload(request)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.url, data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            return TransportResponse(exc.code, exc.read().decode("utf-8", "replace"))
        except json.JSONDecodeError as exc:
            raise ToolkitError("TRANSPORT_ERROR", f"invalid JSON response: {exc}") from exc
        return parse_response_body(body)


Script = Sequence[Any]


class MockTransport:
    """Deterministic transport for tests.

    ``responder`` maps a request to a reply; otherwise replies are taken from
    ``script`` in order (the last entry repeats). A reply is a string (status
    200), an int status, or a ``TransportResponse``. Calls and peak
    concurrency are recorded.
    """

    def __init__(
        self,
        script: Script | None = None,
        responder: Callable[[CompletionRequest], Any] | None = None,
        delay: float = 0.0,
    ) -> None:
        self.script = list(script) if script is not None else ["ok"]
        self.responder = responder
        self.delay = delay
        self.calls: list[CompletionRequest] = []
        self.in_flight = 0
        self.peak_in_flight = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return len(self.calls)

    def send(self, request: CompletionRequest) -> TransportResponse:
        with self._lock:
            index = len(self.calls)
            self.calls.append(request)
            self.in_flight += 1
            self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
        try:
            if self.delay:
                time.sleep(self.delay)
            if self.responder is not None:
                reply = self.responder(request)
            else:
                reply = self.script[min(index, len(self.script) - 1)]
            return _as_response(reply, request)
        finally:
            with self._lock:
                self.in_flight -= 1


def _as_response(reply: Any, request: CompletionRequest) -> TransportResponse:
    if isinstance(reply, TransportResponse):
        return reply
    if isinstance(reply, int):
        return TransportResponse(reply)
    if isinstance(reply, BaseException):
        raise reply
    text = str(reply)
    prompt_tokens = sum(len(m.text.split()) for m in request.messages)
    return TransportResponse(200, text, {"prompt_tokens": prompt_tokens, "completion_tokens": len(text.split())})


class ReplayTransport:
    """Replays responses captured by ``RecordingTransport``, keyed by request_key."""

    def __init__(self, fixture_dir: str | Path) -> None:
        self.fixture_dir = Path(fixture_dir)

    def send(self, request: CompletionRequest) -> TransportResponse:
        path = self.fixture_dir / f"{request.request_key}.json"
        if not path.is_file():
            raise ToolkitError("TRANSPORT_ERROR", "no recorded fixture for request", request_key=request.request_key)
        data = json.loads(path.read_text(encoding="utf-8"))
        return TransportResponse(int(data["status"]), data["text"], dict(data["usage"]))


class RecordingTransport:
    def __init__(self, inner: Transport, fixture_dir: str | Path) -> None:
        self.inner = inner
        self.fixture_dir = Path(fixture_dir)
        self.fixture_dir.mkdir(parents=True, exist_ok=True)

    def send(self, request: CompletionRequest) -> TransportResponse:
        response = self.inner.send(request)
        if response.status == 200:
            record = {"status": response.status, "text": response.text, "usage": response.usage}
            _atomic_write_json(self.fixture_dir / f"{request.request_key}.json", record)
        return response


def _atomic_write_json(path: Path, data: dict[str, Any]) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    tmp.write_text(json.dumps(data, ensure_ascii=False, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


class DiskCache:
    """Content-addressed response cache: one JSON file per request key."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def get(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, json.JSONDecodeError):
            logger.warning("ignoring unreadable cache entry %s", path)
            return None

    def put(self, key: str, request: CompletionRequest, result: CompletionResult) -> None:
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        _atomic_write_json(
            path,
            {
                "request_key": key,
                "request_digest": {
                    "model": request.model,
                    "temperature": request.temperature,
                    "sample": request.sample,
                    "messages": len(request.messages),
                },
                "text": result.text,
                "usage": result.usage,
                "timestamp": time.time(),
            },
        )


class RateLimiter:
    """Sliding one-second window admitting at most ``per_second`` dispatches."""

    def __init__(
        self,
        per_second: float,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if per_second <= 0:
            raise ValueError("per_second must be > 0")
        self.limit = int(per_second)
        self.clock = clock
        self.sleep = sleep
        self.dispatches: collections.deque[float] = collections.deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        with self._lock:
            while True:
                now = self.clock()
                while self.dispatches and self.dispatches[0] <= now - 1.0:
                    self.dispatches.popleft()
                if len(self.dispatches) < max(self.limit, 1):
                    self.dispatches.append(now)
                    return
                self.sleep(self.dispatches[0] + 1.0 - now)


class Gateway:
    """Thread-safe completion client.

    Concurrent identical requests coalesce: one thread performs the call, the
    others then read its cached result.
    """

    def __init__(
        self,
        transport: Transport,
        cache_dir: str | Path | None = None,
        max_retries: int = 4,
        backoff_base: float = 0.5,
        backoff_cap: float = 8.0,
        rate_limit: float | None = None,
        token_budget: int | None = None,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.transport = transport
        self.cache = DiskCache(cache_dir) if cache_dir is not None else None
        self._memory: dict[str, dict[str, Any]] = {}
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.limiter = RateLimiter(rate_limit, clock, sleep) if rate_limit else None
        self.token_budget = token_budget
        self.tokens_used = 0
        self.network_calls = 0
        self._sleep = sleep
        self._lock = threading.Lock()
        self._key_locks: dict[str, threading.Lock] = {}

    def _lookup(self, key: str) -> dict[str, Any] | None:
        hit = self._memory.get(key)
        if hit is None and self.cache is not None:
            hit = self.cache.get(key)
        return hit

    def complete(self, req: CompletionRequest) -> CompletionResult:
        key = req.request_key
        with self._lock:
            key_lock = self._key_locks.setdefault(key, threading.Lock())
        with key_lock:
            hit = self._lookup(key)
            if hit is not None:
                return CompletionResult(hit["text"], dict(hit["usage"]), from_cache=True, attempts=0)
            result = self._call(req)
            entry = {"text": result.text, "usage": result.usage}
            with self._lock:
                self._memory[key] = entry
            if self.cache is not None:
                self.cache.put(key, req, result)
            return result

    def _call(self, req: CompletionRequest) -> CompletionResult:
        attempts = 0
        last_status: int | None = None
        while attempts <= self.max_retries:
            with self._lock:
                if self.token_budget is not None and self.tokens_used >= self.token_budget:
                    raise ToolkitError(
                        "BUDGET_EXCEEDED", "token budget exhausted",
                        budget=self.token_budget, used=self.tokens_used,
                    )
            if attempts:
                self._sleep(min(self.backoff_cap, self.backoff_base * 2 ** (attempts - 1)))
            if self.limiter is not None:
                self.limiter.acquire()
            attempts += 1
            with self._lock:
                self.network_calls += 1
            try:
                response = self.transport.send(req)
            except ToolkitError:
                raise
            except OSError as exc:
                logger.warning("transport failure (attempt %d): %s", attempts, exc)
                last_status = None
                continue
            last_status = response.status
            if response.status == 200:
                with self._lock:
                    self.tokens_used += sum(int(v) for v in response.usage.values())
                return CompletionResult(response.text, dict(response.usage), False, attempts)
            if response.status in (401, 403):
                raise ToolkitError("AUTH_FAILED", f"endpoint returned {response.status}", status=response.status)
            if response.status not in RETRYABLE_STATUSES:
                raise ToolkitError(
                    "TRANSPORT_ERROR", f"endpoint returned {response.status}",
                    status=response.status, body=response.text[:500],
                )
            logger.info("retryable status %d (attempt %d)", response.status, attempts)
        raise ToolkitError("EXHAUSTED_RETRIES", f"gave up after {attempts} attempts", last_status=last_status)

    def complete_batch(
        self, reqs: Iterable[CompletionRequest], max_in_flight: int = 4
    ) -> list[CompletionResult | ToolkitError]:
        """Order-aligned results; failures are returned in place as ``ToolkitError``."""
        if max_in_flight < 1:
            raise ToolkitError("USAGE", "max_in_flight must be >= 1")
        reqs = list(reqs)
        if not reqs:
            return []

        def run(req: CompletionRequest) -> CompletionResult | ToolkitError:
            try:
                return self.complete(req)
            except ToolkitError as exc:
                return exc

        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            return list(pool.map(run, reqs))
