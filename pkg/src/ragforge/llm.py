"""Text-generation providers: a deterministic mock and a remote HTTP client.

The mock provider exists so that pipeline replays and the test suite are
fully offline and byte-reproducible: its output is "MOCK: " followed by the
last line of the prompt, truncated to max_tokens * 4 characters. Temperature
is ignored by the mock.

The remote provider speaks the OpenAI-compatible chat-completions JSON shape
against a configurable endpoint.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Protocol

from .errors import (
    JsonNotFound,
    KeyMissing,
    NotAStringArray,
    PromptTooLarge,
    ProviderUnavailable,
)

ENV_ENDPOINT = "RAGFORGE_LLM_ENDPOINT"
ENV_MODEL = "RAGFORGE_LLM_MODEL"
ENV_API_KEY = "RAGFORGE_LLM_API_KEY"

DEFAULT_MAX_TOKENS = 200
DEFAULT_TEMPERATURE = 0.2
DEFAULT_PROMPT_CHAR_CAP = 48_000
MOCK_CHARS_PER_TOKEN = 4


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    model: str = ""

    def __post_init__(self) -> None:
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    prompt_digest: str
    provider_id: str
    latency_ms: float
    finish_reason: str  # "stop" | "length" | "error"


class LlmProvider(Protocol):
    provider_id: str

    def complete(self, req: LlmRequest) -> LlmResponse: ...


def _prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class MockLlm:
    """Pure function of (prompt, max_tokens); see module docstring for the rule."""

    provider_id = "mock"

    def __init__(self, prompt_char_cap: int = DEFAULT_PROMPT_CHAR_CAP) -> None:
        self.prompt_char_cap = prompt_char_cap

    def complete(self, req: LlmRequest) -> LlmResponse:
        if len(req.prompt) > self.prompt_char_cap:
            raise PromptTooLarge(
                f"prompt has {len(req.prompt)} chars, cap is {self.prompt_char_cap}"
            )
        lines = req.prompt.splitlines()
        last = lines[-1] if lines else ""
        text = f"MOCK: {last}"
        cap = req.max_tokens * MOCK_CHARS_PER_TOKEN
        finish = "stop"
        if len(text) > cap:
            text = text[:cap]
            finish = "length"
        return LlmResponse(
            text=text,
            prompt_digest=_prompt_digest(req.prompt),
            provider_id=self.provider_id,
            latency_ms=0.0,
            finish_reason=finish,
        )


class RemoteLlm:
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        endpoint: str | None = None,
        model: str | None = None,
        api_key: str | None = None,
        *,
        prompt_char_cap: int = DEFAULT_PROMPT_CHAR_CAP,
        max_attempts: int = 3,
        backoff_base_s: float = 0.5,
        timeout_s: float = 120.0,
        max_concurrency: int = 4,
        transport=None,
    ) -> None:
        self.endpoint = endpoint or os.environ.get(ENV_ENDPOINT, "")
        self.model = model or os.environ.get(ENV_MODEL, "gpt-4o-mini")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        self.provider_id = f"remote:{self.model}"
        self.prompt_char_cap = prompt_char_cap
        self.max_attempts = max_attempts
        self.backoff_base_s = backoff_base_s
        self.timeout_s = timeout_s
        self._semaphore = threading.Semaphore(max_concurrency)
        self._transport = transport

    def complete(self, req: LlmRequest) -> LlmResponse:
        import httpx

        if not self.endpoint:
            raise ProviderUnavailable(
                f"no LLM endpoint configured (set {ENV_ENDPOINT})", attempts=0
            )
        if len(req.prompt) > self.prompt_char_cap:
            raise PromptTooLarge(
                f"prompt has {len(req.prompt)} chars, cap is {self.prompt_char_cap}"
            )
        payload = {
            "model": req.model or self.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "max_tokens": req.max_tokens,
            "temperature": req.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"

        last_error: Exception | None = None
        start = time.perf_counter()
        with self._semaphore:
            for attempt in range(1, self.max_attempts + 1):
                try:
                    with httpx.Client(transport=self._transport, timeout=self.timeout_s) as client:
                        resp = client.post(self.endpoint, json=payload, headers=headers)
                    resp.raise_for_status()
                    body = resp.json()
                    choice = body["choices"][0]
                    return LlmResponse(
                        text=choice["message"]["content"],
                        prompt_digest=_prompt_digest(req.prompt),
                        provider_id=self.provider_id,
                        latency_ms=(time.perf_counter() - start) * 1000.0,
                        finish_reason=choice.get("finish_reason", "stop"),
                    )
                except Exception as exc:
                    last_error = exc
                    if attempt < self.max_attempts:
                        time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
        raise ProviderUnavailable(
            f"LLM provider failed after {self.max_attempts} attempts: {last_error}",
            attempts=self.max_attempts,
        )


def generate(provider: LlmProvider, req: LlmRequest) -> LlmResponse:
    """Run one completion against the given provider."""
    return provider.complete(req)


def parse_json_list(text: str, key: str) -> list[str]:
    """Extract the first JSON object in text and return its string array at key.

    Tolerates surrounding prose and markdown code fences: scanning starts at
    each '{' until a parse succeeds.
    """
    decoder = json.JSONDecoder()
    obj = None
    pos = text.find("{")
    while pos != -1:
        try:
            candidate, _ = decoder.raw_decode(text, pos)
        except ValueError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(candidate, dict):
            obj = candidate
            break
        pos = text.find("{", pos + 1)
    if obj is None:
        raise JsonNotFound("no JSON object found in text")
    if key not in obj:
        raise KeyMissing(key)
    value = obj[key]
    if not isinstance(value, list) or not all(isinstance(item, str) for item in value):
        raise NotAStringArray(f"value under {key!r} is not an array of strings")
    return list(value)


def render_json_list(items: list[str], key: str) -> str:
    """Inverse of parse_json_list for fence-free content (round-trip helper)."""
    return json.dumps({key: list(items)})
