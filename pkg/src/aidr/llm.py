"""Minimal OpenAI-compatible chat-completion client plus an in-process mock."""
from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import httpx

from .errors import AuthenticationError, EndpointUnreachableError, TransportError

log = logging.getLogger(__name__)

API_KEY_ENV = "LLM_API_KEY"
RETRY_STATUS_CODES = {408, 409, 429, 500, 502, 503, 504}


@dataclass(frozen=True)
class LlmRequest:
    model: str
    messages: tuple
    temperature: float = 0.0
    max_tokens: int = 512
    # Not sent over the wire; lets mocks and logs know what the call is for.
    tag: str = ""

    @classmethod
    def user(cls, model: str, content: str, tag: str = "", **kw) -> "LlmRequest":
        return cls(model, ({"role": "user", "content": content},), tag=tag, **kw)

    @property
    def prompt(self) -> str:
        return "\n".join(m["content"] for m in self.messages)

    def payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [dict(m) for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }


@dataclass(frozen=True)
class LlmResponse:
    text: str
    finish_reason: str = "stop"
    usage: dict = field(default_factory=dict)


class HttpChatBackend:
    """POSTs chat-completion payloads to an OpenAI-compatible server."""

    def __init__(self, endpoint: str, api_key: str | None = None, timeout: float = 60.0,
                 transport: httpx.BaseTransport | None = None):
        url = endpoint.rstrip("/")
        if not url.endswith("/chat/completions"):
            url += "/chat/completions"
        self.url = url
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def complete(self, request: LlmRequest) -> LlmResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.url, json=request.payload(), headers=headers)
        except httpx.ConnectError as exc:
            raise EndpointUnreachableError(f"cannot reach {self.url}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"{self.url} rejected credentials (HTTP {resp.status_code}); "
                                      f"check ${API_KEY_ENV}")
        if resp.status_code in RETRY_STATUS_CODES:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
        try:
            body = resp.json()
            choice = body["choices"][0]
            return LlmResponse(choice["message"]["content"] or "", choice.get("finish_reason") or "stop",
                               body.get("usage") or {})
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload from {self.url}: {exc}") from exc

    def close(self):
        self._client.close()


class MockBackend:
    """Deterministic in-process backend.

    ``responder(request) -> str`` produces the text. ``failures`` maps a
    request tag to how many times that tag should fail transiently before
    succeeding. In-flight calls are counted so tests can check concurrency
    limits.
    """

    def __init__(self, responder: Callable[[LlmRequest], str], failures: dict | None = None,
                 delay: float = 0.0):
        self.responder = responder
        self.failures = dict(failures or {})
        self.delay = delay
        self.calls: list[str] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self._lock = threading.Lock()

    def complete(self, request: LlmRequest) -> LlmResponse:
        with self._lock:
            self.calls.append(request.tag)
            self.in_flight += 1
            self.max_in_flight = max(self.max_in_flight, self.in_flight)
            remaining = self.failures.get(request.tag, 0)
            if remaining:
                self.failures[request.tag] = remaining - 1
        try:
            if self.delay:
                time.sleep(self.delay)
            if remaining:
                raise TransportError(f"injected transient failure for {request.tag}")
            text = self.responder(request)
        finally:
            with self._lock:
                self.in_flight -= 1
        prompt_tokens = len(request.prompt.split())
        completion_tokens = len(text.split())
        return LlmResponse(text, "stop", {"prompt_tokens": prompt_tokens, "completion_tokens": completion_tokens,
                                          "total_tokens": prompt_tokens + completion_tokens})


@dataclass
class RetryPolicy:
    max_retries: int = 3
    base_delay: float = 0.5
    max_delay: float = 8.0
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=lambda: random.Random(0))

    def delay(self, attempt: int) -> float:
        # full jitter
        return self.rng.uniform(0, min(self.max_delay, self.base_delay * 2**attempt))


def complete_with_retry(backend, request: LlmRequest, policy: RetryPolicy | None = None):
    """Returns ``(response, retries_used)``; re-raises after ``max_retries`` failed retries.

    Authentication failures are never retried.
    """
    policy = policy or RetryPolicy()
    attempt = 0
    while True:
        try:
            return backend.complete(request), attempt
        except (TransportError, EndpointUnreachableError) as exc:
            if attempt >= policy.max_retries:
                raise
            wait = policy.delay(attempt)
            log.warning("%s failed (%s); retry %d/%d in %.2fs", request.tag or "request", exc,
                        attempt + 1, policy.max_retries, wait)
            policy.sleep(wait)
            attempt += 1
