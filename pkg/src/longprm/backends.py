"""Pluggable completion backends.

One protocol serves every model role in the pipeline (generator, judge,
rollout completer): ``complete(prompt, params) -> text``.  The HTTP backend
speaks the OpenAI-compatible chat wire format; the simulated backends live
in :mod:`longprm.simworld`.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, runtime_checkable

import httpx


class BackendError(RuntimeError):
    """Transport or protocol failure talking to a completion backend."""

    def __init__(self, message: str, *, endpoint: str | None = None,
                 status: int | None = None):
        self.endpoint = endpoint
        self.status = status
        detail = message
        if endpoint:
            detail += f" (endpoint: {endpoint})"
        if status is not None:
            detail += f" (status: {status})"
        super().__init__(detail)


class RateLimitedError(BackendError):
    """Backend returned a rate-limit response after the retry budget."""


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    max_tokens: int = 1024
    seed: int | None = None
    stop: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


@runtime_checkable
class CompletionBackend(Protocol):
    """Anything that can turn a prompt into text."""

    id: str

    def complete(self, prompt: str, params: SamplingParams) -> str: ...


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from arbitrary key parts.

    Hash-based (not ``hash()``) so results are identical across processes and
    runs; lets concurrent workers draw independent, reproducible streams.
    """
    key = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class HttpBackendConfig:
    endpoint: str
    model: str
    timeout_s: float = 60.0
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_s: float = 0.5
    audit_log: str | None = None
    api_key_env: str = "OPENAI_API_KEY"


class HttpCompletionBackend:
    """OpenAI-compatible chat-completions client.

    Retries with exponential backoff on rate limits, 5xx responses, and
    transport errors; total wait is bounded by the retry budget.  A semaphore
    caps in-flight requests so the backend is safe to call from a worker pool.
    """

    def __init__(self, config: HttpBackendConfig, client: httpx.Client | None = None):
        self.config = config
        self.id = config.model
        self._semaphore = threading.BoundedSemaphore(config.max_in_flight)
        self._audit_lock = threading.Lock()
        self._client = client or httpx.Client(timeout=config.timeout_s)

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.config.api_key_env, "")
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        return headers

    def _audit(self, entry: dict) -> None:
        if not self.config.audit_log:
            return
        with self._audit_lock:
            with Path(self.config.audit_log).open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(entry, ensure_ascii=False) + "\n")

    def complete(self, prompt: str, params: SamplingParams) -> str:
        payload: dict = {
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            payload["seed"] = params.seed
        if params.stop:
            payload["stop"] = list(params.stop)

        last_error: BackendError | None = None
        with self._semaphore:
            for attempt in range(self.config.max_retries + 1):
                if attempt > 0:
                    time.sleep(self.config.backoff_s * (2 ** (attempt - 1)))
                try:
                    response = self._client.post(
                        self.config.endpoint, json=payload, headers=self._headers())
                except httpx.TimeoutException as exc:
                    last_error = BackendError(f"request timed out: {exc}",
                                              endpoint=self.config.endpoint)
                    continue
                except httpx.HTTPError as exc:
                    last_error = BackendError(f"transport error: {exc}",
                                              endpoint=self.config.endpoint)
                    continue

                if response.status_code == 429:
                    last_error = RateLimitedError(
                        "rate limited", endpoint=self.config.endpoint, status=429)
                    continue
                if response.status_code >= 500:
                    last_error = BackendError(
                        f"server error: {response.text[:200]}",
                        endpoint=self.config.endpoint, status=response.status_code)
                    continue
                if response.status_code != 200:
                    raise BackendError(
                        f"unexpected response: {response.text[:200]}",
                        endpoint=self.config.endpoint, status=response.status_code)

                try:
                    body = response.json()
                    text = body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError, ValueError) as exc:
                    raise BackendError(
                        f"malformed completion body: {response.text[:200]}",
                        endpoint=self.config.endpoint, status=200) from exc
                self._audit({"model": self.config.model, "prompt": prompt,
                             "response": text, "attempt": attempt})
                return text

        assert last_error is not None
        self._audit({"model": self.config.model, "prompt": prompt,
                     "error": str(last_error)})
        raise last_error


def http_complete(endpoint: str, model: str, prompt: str, params: SamplingParams,
                  **config_kwargs) -> str:
    """One-shot completion against an OpenAI-compatible endpoint."""
    backend = HttpCompletionBackend(HttpBackendConfig(
        endpoint=endpoint, model=model, **config_kwargs))
    return backend.complete(prompt, params)


@dataclass
class ScriptedBackend:
    """Test/demo backend that replays a fixed list of responses."""

    responses: list[str]
    id: str = "scripted"
    calls: int = 0

    def complete(self, prompt: str, params: SamplingParams) -> str:
        if self.calls >= len(self.responses):
            raise BackendError("scripted backend exhausted", endpoint=self.id)
        text = self.responses[self.calls]
        self.calls += 1
        return text
