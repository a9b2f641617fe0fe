"""Generation backends: live chat-completion HTTP client, scripted mock for
tests, and a content-addressed record/replay cache.

The cache stores one JSON line per *sample* so a run recorded with batched
sampling replays identically when samples are issued one by one (and vice
versa). Corrupt trailing lines (truncated writes) are tolerated on load.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, List, Optional, Sequence

import requests

from .core import Usage

logger = logging.getLogger(__name__)

DEFAULT_MODEL = "gpt-3.5-turbo-0125"
API_KEY_ENV = "BREADTH_API_KEY"

BACKEND_LIVE = "live"
BACKEND_MOCK = "mock"
BACKEND_REPLAY_HIT = "replay_hit"


class LlmIoError(Exception):
    """Base class for backend failures."""


class NetworkError(LlmIoError):
    """Transport-level failure; retryable with backoff."""


class RateLimitedError(LlmIoError):
    def __init__(self, message: str, retry_after: float = 1.0):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponseError(LlmIoError):
    """Unusable response body; never retried."""


class CacheMissError(LlmIoError):
    """Replay-only mode saw a request that was never recorded."""


class NoScriptMatchError(LlmIoError):
    """No scripted rule matches the request input."""


class ScriptExhaustedError(LlmIoError):
    """A scripted rule's response list ran out."""


@dataclass(frozen=True)
class CompletionRequest:
    """One generation request against a chat-completion backend."""

    model: str
    user_text: str
    system_text: Optional[str] = None
    temperature: float = 1.0
    top_k: Optional[int] = None
    n_samples: int = 1
    max_tokens: Optional[int] = None
    sample_batch_id: int = 0  # disambiguates sequential single-sample calls

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "system_text": self.system_text,
            "user_text": self.user_text,
            "temperature": self.temperature,
            "top_k": self.top_k,
            "n_samples": self.n_samples,
            "max_tokens": self.max_tokens,
            "sample_batch_id": self.sample_batch_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompletionRequest":
        return cls(**d)


@dataclass(frozen=True)
class CompletionResponse:
    texts: tuple
    usage: Usage = field(default_factory=Usage)
    backend: str = BACKEND_MOCK

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))


def cache_key(req: CompletionRequest) -> str:
    """256-bit content digest over every request field."""
    payload = json.dumps(req.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class Backend:
    """Minimal backend interface: ``complete`` plus a default model name.

    ``deterministic`` marks backends whose responses (and latencies) are
    reproducible byte for byte, which lets the runner zero out wall times.
    """

    model: str = DEFAULT_MODEL
    deterministic: bool = False

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        raise NotImplementedError


class TokenBucketLimiter:
    """Gates live requests: bounded concurrency plus a requests/minute budget."""

    def __init__(self, max_concurrent: int = 4, requests_per_minute: int = 60,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self._semaphore = threading.Semaphore(max_concurrent)
        self._rate = requests_per_minute / 60.0
        self._capacity = float(requests_per_minute)
        self._tokens = self._capacity
        self._clock = clock
        self._sleep = sleep
        self._last = clock()
        self._lock = threading.Lock()

    def _take_token(self):
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self._capacity, self._tokens + (now - self._last) * self._rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self._rate
            self._sleep(wait)

    def __enter__(self):
        self._semaphore.acquire()
        try:
            self._take_token()
        except BaseException:
            self._semaphore.release()
            raise
        return self

    def __exit__(self, *exc):
        self._semaphore.release()
        return False


@dataclass
class RetryPolicy:
    """Bounded exponential backoff for transient failures only."""

    max_attempts: int = 4
    base_delay: float = 0.5
    max_delay: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.max_delay, self.base_delay * (2 ** attempt))


class LiveBackend(Backend):
    """HTTP client for any endpoint speaking the common chat-completion JSON
    schema (messages array with system/user roles, ``temperature``, ``n``).

    Credentials come from the ``BREADTH_API_KEY`` env var unless passed
    explicitly. Multi-sample requests go out as one call with ``n`` when
    ``batch_samples`` is on, else as sequential single-sample calls with
    distinct ``sample_batch_id``s.
    """

    def __init__(self, base_url: str, api_key: Optional[str] = None,
                 model: str = DEFAULT_MODEL, timeout: float = 60.0,
                 batch_samples: bool = True,
                 retry: Optional[RetryPolicy] = None,
                 limiter: Optional[TokenBucketLimiter] = None,
                 session: Optional[requests.Session] = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.model = model
        self.timeout = timeout
        self.batch_samples = batch_samples
        self.retry = retry or RetryPolicy()
        self.limiter = limiter or TokenBucketLimiter()
        self.session = session or requests.Session()
        self._sleep = sleep

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        if req.n_samples > 1 and not self.batch_samples:
            texts: List[str] = []
            usage = Usage()
            for i in range(req.n_samples):
                single = replace(req, n_samples=1, sample_batch_id=i)
                resp = self._complete_once(single)
                texts.extend(resp.texts)
                usage = usage + resp.usage
            return CompletionResponse(texts=tuple(texts), usage=usage, backend=BACKEND_LIVE)
        return self._complete_once(req)

    def _complete_once(self, req: CompletionRequest) -> CompletionResponse:
        last_error: Optional[Exception] = None
        for attempt in range(self.retry.max_attempts):
            try:
                with self.limiter:
                    return self._post(req)
            except RateLimitedError as exc:
                last_error = exc
                logger.warning("rate limited, sleeping %.1fs", exc.retry_after)
                self._sleep(exc.retry_after)
            except NetworkError as exc:
                last_error = exc
                delay = self.retry.delay(attempt)
                logger.warning("network error (%s), retrying in %.1fs", exc, delay)
                self._sleep(delay)
        raise NetworkError(f"gave up after {self.retry.max_attempts} attempts: {last_error}")

    def _post(self, req: CompletionRequest) -> CompletionResponse:
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        payload: dict = {
            "model": req.model,
            "messages": messages,
            "temperature": req.temperature,
            "n": req.n_samples,
        }
        if req.top_k is not None:
            payload["top_k"] = req.top_k
        if req.max_tokens is not None:
            payload["max_tokens"] = req.max_tokens
        headers = {"Authorization": f"Bearer {self.api_key}"}
        try:
            resp = self.session.post(
                f"{self.base_url}/chat/completions",
                json=payload, headers=headers, timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise NetworkError(str(exc)) from exc
        if resp.status_code == 429:
            retry_after = float(resp.headers.get("Retry-After", 1.0))
            raise RateLimitedError("rate limited by server", retry_after=retry_after)
        if resp.status_code >= 500:
            raise NetworkError(f"server error {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponseError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            data = resp.json()
            choices = sorted(data["choices"], key=lambda c: c.get("index", 0))
            texts = tuple(c["message"]["content"] for c in choices)
            usage_data = data.get("usage", {})
        except (ValueError, KeyError, TypeError) as exc:
            raise MalformedResponseError(f"unparseable response body: {exc}") from exc
        if len(texts) != req.n_samples:
            raise MalformedResponseError(
                f"expected {req.n_samples} samples, got {len(texts)}"
            )
        return CompletionResponse(
            texts=texts,
            usage=Usage(
                int(usage_data.get("prompt_tokens", 0)),
                int(usage_data.get("completion_tokens", 0)),
            ),
            backend=BACKEND_LIVE,
        )


def _word_count(text: str) -> int:
    return len(text.split())


@dataclass
class ScriptRule:
    """One scripted response source: exact or substring match on the input."""

    pattern: str
    responses: List[str]
    exact: bool = False


class ScriptedBackend(Backend):
    """Deterministic test backend answering from match rules.

    Rule priority: exact match beats substring; among substring matches the
    longest pattern wins, then declaration order. Each matched rule consumes
    its response list in order (``n_samples`` entries per call); running out
    raises :class:`ScriptExhaustedError`. All calls are logged in ``calls``.
    """

    deterministic = True

    def __init__(self, script=None, model: str = DEFAULT_MODEL):
        self.rules: List[ScriptRule] = []
        self.calls: List[CompletionRequest] = []
        self.model = model
        self._lock = threading.Lock()
        if script:
            if isinstance(script, dict):
                for pattern, responses in script.items():
                    self.add_rule(pattern, responses)
            else:
                for rule in script:
                    self.rules.append(rule)

    def add_rule(self, pattern: str, responses, exact: bool = False) -> "ScriptedBackend":
        if isinstance(responses, str):
            responses = [responses]
        self.rules.append(ScriptRule(pattern, list(responses), exact=exact))
        return self

    def add_exact(self, pattern: str, responses) -> "ScriptedBackend":
        return self.add_rule(pattern, responses, exact=True)

    def _match(self, text: str) -> ScriptRule:
        exact = [r for r in self.rules if r.exact and r.pattern == text]
        if exact:
            return exact[0]
        best: Optional[ScriptRule] = None
        for rule in self.rules:
            if rule.exact or rule.pattern not in text:
                continue
            if best is None or len(rule.pattern) > len(best.pattern):
                best = rule
        if best is None:
            raise NoScriptMatchError(f"no rule matches input: {text[:120]!r}")
        return best

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        with self._lock:
            self.calls.append(req)
            rule = self._match(req.user_text)
            if len(rule.responses) < req.n_samples:
                raise ScriptExhaustedError(
                    f"rule {rule.pattern!r} has {len(rule.responses)} responses left, "
                    f"needs {req.n_samples}"
                )
            texts = tuple(rule.responses[: req.n_samples])
            del rule.responses[: req.n_samples]
        usage = Usage(_word_count(req.user_text), sum(_word_count(t) for t in texts))
        return CompletionResponse(texts=texts, usage=usage, backend=BACKEND_MOCK)


def scripted_backend(script, model: str = DEFAULT_MODEL) -> ScriptedBackend:
    """Build a scripted backend from {pattern: responses} or ScriptRule list."""
    return ScriptedBackend(script, model=model)


class ReplayStore:
    """Append-only JSON-lines store of per-sample responses keyed by digest.

    Readers share the in-memory index; appends are serialized. A corrupt
    final line (truncated write) is dropped on load; corruption anywhere
    else is an error.
    """

    def __init__(self, path: str):
        self.path = path
        self._lock = threading.Lock()
        self._records: dict = {}
        self._load()

    def _load(self):
        if not os.path.exists(self.path):
            return
        with open(self.path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except ValueError:
                if i == len(lines) - 1:
                    logger.warning("dropping corrupt trailing cache line in %s", self.path)
                    continue
                raise ValueError(f"{self.path}: corrupt cache record at line {i + 1}")
            self._records[record["key"]] = record

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def get(self, key: str) -> Optional[dict]:
        return self._records.get(key)

    def records(self) -> Iterable[dict]:
        return list(self._records.values())

    def append(self, record: dict):
        with self._lock:
            self._records[record["key"]] = record
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
                fh.flush()


def _per_sample_requests(req: CompletionRequest) -> List[CompletionRequest]:
    if req.n_samples == 1:
        return [req]
    return [replace(req, n_samples=1, sample_batch_id=i) for i in range(req.n_samples)]


def _split_completion_tokens(total: int, texts: Sequence[str]) -> List[int]:
    # Proportional to text length, remainder onto the first sample.
    weights = [max(1, len(t)) for t in texts]
    scale = sum(weights)
    shares = [total * w // scale for w in weights]
    shares[0] += total - sum(shares)
    return shares


class ReplayBackend(Backend):
    """Serves every request from a recorded store; misses are errors."""

    deterministic = True

    def __init__(self, store: ReplayStore, model: str = DEFAULT_MODEL):
        self.store = store
        self.model = model

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        return _assemble_from_store(self.store, req)


class RecordingBackend(Backend):
    """Read-through cache around another backend.

    Fully cached requests are served as replay hits; anything else goes to
    the inner backend and gets persisted per sample before returning.
    """

    def __init__(self, inner: Backend, store: ReplayStore):
        self.inner = inner
        self.store = store
        self.model = inner.model
        self.deterministic = inner.deterministic

    def complete(self, req: CompletionRequest) -> CompletionResponse:
        singles = _per_sample_requests(req)
        if all(cache_key(s) in self.store for s in singles):
            return _assemble_from_store(self.store, req)
        response = self.inner.complete(req)
        shares = _split_completion_tokens(response.usage.completion_tokens, response.texts)
        for single, text, share in zip(singles, response.texts, shares):
            self.store.append(
                {
                    "key": cache_key(single),
                    "request": single.to_dict(),
                    "texts": [text],
                    "usage": Usage(response.usage.prompt_tokens, share).to_dict(),
                }
            )
        # Return the store's view so record and replay runs emit identical bytes.
        return _assemble_from_store(self.store, req, backend_tag=response.backend)


def _assemble_from_store(store: ReplayStore, req: CompletionRequest,
                         backend_tag: str = BACKEND_REPLAY_HIT) -> CompletionResponse:
    texts: List[str] = []
    prompt_tokens = 0
    completion_tokens = 0
    for i, single in enumerate(_per_sample_requests(req)):
        record = store.get(cache_key(single))
        if record is None:
            raise CacheMissError(f"no recorded response for key {cache_key(single)}")
        texts.extend(record["texts"])
        usage = Usage.from_dict(record.get("usage", {}))
        if i == 0:
            prompt_tokens = usage.prompt_tokens
        completion_tokens += usage.completion_tokens
    return CompletionResponse(
        texts=tuple(texts),
        usage=Usage(prompt_tokens, completion_tokens),
        backend=backend_tag,
    )


def complete(backend: Backend, req: CompletionRequest) -> CompletionResponse:
    """Run one request against a configured backend."""
    return backend.complete(req)
