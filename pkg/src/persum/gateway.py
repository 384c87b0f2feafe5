"""Uniform chat-completion client with retry/backoff plus a deterministic mock.

One wire shape (messages array of {role, content} with sampling fields) serves
hosted open-source and commercial endpoints alike. The mock backend answers by
request fingerprint and makes whole pipeline runs bit-reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol
from urllib.parse import urlparse

import httpx

from persum.prompting import PromptMessages

#: Default sampling temperatures for the four-variant proposer layout.
TEMPERATURE_VARIANTS = (0.3, 0.5, 0.7, 0.9)


class GatewayError(RuntimeError):
    """Non-retryable completion failure."""


class TransientError(GatewayError):
    """Retryable transport / throttling failure."""


class ExhaustedRetriesError(GatewayError):
    def __init__(self, message: str, attempts: list[str]):
        super().__init__(message)
        self.attempts = attempts


@dataclass(frozen=True)
class AgentSpec:
    name: str
    model_id: str
    endpoint: str = "mock://local"
    temperature: float = 0.0
    max_tokens: int = 1024
    system_override: str | None = None
    auth_ref: str | None = None

    def __post_init__(self) -> None:
        if not (self.temperature >= 0.0 and self.temperature == self.temperature):
            raise ValueError(f"agent {self.name}: temperature must be finite and >= 0")
        if self.max_tokens < 1:
            raise ValueError(f"agent {self.name}: max_tokens must be positive")
        parsed = urlparse(self.endpoint)
        if not parsed.scheme:
            raise ValueError(f"agent {self.name}: malformed endpoint {self.endpoint!r}")


@dataclass(frozen=True)
class ModelResponse:
    text: str
    agent: str
    latency_ms: float
    attempt: int

    def __post_init__(self) -> None:
        if self.attempt < 1:
            raise ValueError("attempt must be >= 1")


class Backend(Protocol):
    def send(self, agent: AgentSpec, prompt: PromptMessages) -> str: ...


def fingerprint(agent_name: str, prompt: PromptMessages) -> str:
    digest = hashlib.sha256()
    for part in (agent_name, prompt.system, prompt.user):
        digest.update(part.encode("utf-8"))
        digest.update(b"\x00")
    return digest.hexdigest()


@dataclass
class MockRule:
    """Scripted behaviour: fail `failures` times, then return `text`.

    text=None means the rule always fails.
    """

    text: str | None
    failures: int = 0
    _calls: int = field(default=0, repr=False)

    def serve(self) -> str:
        self._calls += 1
        if self.text is None or self._calls <= self.failures:
            raise TransientError("scripted failure")
        return self.text


class MockBackend:
    """Deterministic offline backend.

    Resolution order: exact fingerprint, then substring (`contains`) rules in
    registration order, then per-agent defaults, then the default text, then
    the echo fallback. Unmatched requests with no fallback raise.
    """

    def __init__(
        self,
        script: dict[str, MockRule] | None = None,
        contains_rules: list[tuple[str, str]] | None = None,
        agent_defaults: dict[str, str] | None = None,
        default_text: str | None = None,
        echo: bool = False,
    ):
        self.script = dict(script or {})
        self.contains_rules = list(contains_rules or [])
        self.agent_defaults = dict(agent_defaults or {})
        self.default_text = default_text
        self.echo = echo
        self._lock = threading.Lock()

    def register(self, agent_name: str, prompt: PromptMessages, rule: MockRule) -> None:
        self.script[fingerprint(agent_name, prompt)] = rule

    def send(self, agent: AgentSpec, prompt: PromptMessages) -> str:
        key = fingerprint(agent.name, prompt)
        with self._lock:
            rule = self.script.get(key)
            if rule is not None:
                return rule.serve()
        for needle, text in self.contains_rules:
            if needle in prompt.user:
                return text
        if agent.name in self.agent_defaults:
            return self.agent_defaults[agent.name]
        if self.default_text is not None:
            return self.default_text
        if self.echo:
            return prompt.user[-40:]
        raise GatewayError(f"mock backend: no rule for agent {agent.name!r}")


class HttpBackend:
    """POSTs the chat-completions JSON shape and extracts the first choice."""

    def __init__(self, timeout: float = 60.0, client: httpx.Client | None = None):
        self._client = client or httpx.Client(timeout=timeout)

    def send(self, agent: AgentSpec, prompt: PromptMessages) -> str:
        headers = {"Content-Type": "application/json"}
        if agent.auth_ref:
            token = os.environ.get(agent.auth_ref)
            if not token:
                raise GatewayError(
                    f"agent {agent.name}: secret {agent.auth_ref!r} not set in environment"
                )
            headers["Authorization"] = f"Bearer {token}"
        payload = {
            "model": agent.model_id,
            "messages": [
                {"role": "system", "content": agent.system_override or prompt.system},
                {"role": "user", "content": prompt.user},
            ],
            "temperature": agent.temperature,
            "max_tokens": agent.max_tokens,
        }
        try:
            response = self._client.post(agent.endpoint, json=payload, headers=headers)
        except httpx.HTTPError as exc:
            raise TransientError(f"transport failure: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientError(f"retryable status {response.status_code}")
        if response.status_code >= 400:
            raise GatewayError(f"status {response.status_code}: {response.text[:200]}")
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc


class Gateway:
    """Retrying completion client; safe for concurrent calls."""

    def __init__(
        self,
        backend: Backend,
        max_attempts: int = 5,
        base_delay: float = 1.0,
        backoff_factor: float = 2.0,
        sleep: Callable[[float], None] = time.sleep,
        jitter: Callable[[], float] | None = None,
        trace_path: str | Path | None = None,
        max_concurrency: int = 4,
    ):
        self.backend = backend
        self.max_attempts = max_attempts
        self.base_delay = base_delay
        self.backoff_factor = backoff_factor
        self._sleep = sleep
        self._jitter = jitter or random.random
        self.trace_path = Path(trace_path) if trace_path else None
        self.semaphore = threading.BoundedSemaphore(max_concurrency)
        self._trace_lock = threading.Lock()

    def _log(self, record: dict) -> None:
        if self.trace_path is None:
            return
        with self._trace_lock:
            with open(self.trace_path, "a", encoding="utf-8") as handle:
                handle.write(json.dumps(record, ensure_ascii=False) + "\n")

    def complete(self, agent: AgentSpec, prompt: PromptMessages) -> ModelResponse:
        attempt_log: list[str] = []
        for attempt in range(1, self.max_attempts + 1):
            started = time.monotonic()
            try:
                with self.semaphore:
                    text = self.backend.send(agent, prompt)
                if not text.strip():
                    raise GatewayError(f"agent {agent.name}: empty completion")
                latency = (time.monotonic() - started) * 1000.0
                self._log(
                    {
                        "agent": agent.name,
                        "model": agent.model_id,
                        "attempt": attempt,
                        "latency_ms": latency,
                        "status": "ok",
                        "response_chars": len(text),
                    }
                )
                return ModelResponse(text=text, agent=agent.name, latency_ms=latency, attempt=attempt)
            except TransientError as exc:
                attempt_log.append(f"attempt {attempt}: {exc}")
                self._log(
                    {"agent": agent.name, "attempt": attempt, "status": "retryable", "error": str(exc)}
                )
                if attempt < self.max_attempts:
                    delay = self.base_delay * self.backoff_factor ** (attempt - 1)
                    self._sleep(self._jitter() * delay)
            except GatewayError as exc:
                self._log(
                    {"agent": agent.name, "attempt": attempt, "status": "fatal", "error": str(exc)}
                )
                raise
        raise ExhaustedRetriesError(
            f"agent {agent.name}: exhausted {self.max_attempts} attempts", attempt_log
        )


def temperature_variants(base: AgentSpec, temperatures=TEMPERATURE_VARIANTS) -> list[AgentSpec]:
    """Distinct AgentSpecs sharing one model id, one per sampling temperature."""
    return [
        AgentSpec(
            name=f"{base.name}-t{temperature}",
            model_id=base.model_id,
            endpoint=base.endpoint,
            temperature=temperature,
            max_tokens=base.max_tokens,
            system_override=base.system_override,
            auth_ref=base.auth_ref,
        )
        for temperature in temperatures
    ]
