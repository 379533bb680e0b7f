"""Chat-completion gateway for any provider speaking the OpenAI wire format.

Holds the provider configuration type, the HTTP client with retry/backoff,
and a deterministic mock used throughout the test suite. The API key is
resolved through an environment variable named by ``api_key_ref`` so that
project files stay shareable; the secret value itself is never serialized
or logged.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import threading
import time
from dataclasses import dataclass
from typing import Optional, Sequence
from urllib.parse import urlparse

import httpx

from . import errors

logger = logging.getLogger("aiano.llm")

PromptMessages = Sequence[tuple[str, str]]

BACKOFF_BASE_S = 0.5
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2

# protects local single-GPU deployments from request floods
_inflight = threading.BoundedSemaphore(4)


def set_concurrency_cap(n: int) -> None:
    global _inflight
    _inflight = threading.BoundedSemaphore(max(1, n))


@dataclass
class ProviderConfig:
    base_url: str
    model_id: str
    api_key_ref: str = "AIANO_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 2

    def __post_init__(self):
        parsed = urlparse(self.base_url)
        if not parsed.scheme or not parsed.netloc:
            raise errors.ValidationError(f"provider base_url {self.base_url!r} is not a valid URL")
        if self.timeout_s <= 0:
            raise errors.ValidationError("provider timeout_s must be positive")
        if self.max_retries < 0:
            raise errors.ValidationError("provider max_retries must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "base_url": self.base_url,
            "model_id": self.model_id,
            "api_key_ref": self.api_key_ref,
            "timeout_s": self.timeout_s,
            "max_retries": self.max_retries,
        }

    @staticmethod
    def from_dict(raw: dict) -> "ProviderConfig":
        if not isinstance(raw, dict):
            raise errors.ValidationError("provider config must be an object")
        return ProviderConfig(
            base_url=str(raw.get("base_url", "")),
            model_id=str(raw.get("model_id", "")),
            api_key_ref=str(raw.get("api_key_ref", "AIANO_API_KEY")),
            timeout_s=float(raw.get("timeout_s", 60.0)),
            max_retries=int(raw.get("max_retries", 2)),
        )


@dataclass
class Completion:
    text: str
    model_id: str = ""
    usage: Optional[tuple[int, int]] = None  # (prompt_tokens, completion_tokens)
    latency_ms: int = 0


def serialize_messages(messages: PromptMessages) -> str:
    """Canonical JSON form of a message list; input to every prompt hash."""
    return json.dumps(
        [{"role": role, "content": content} for role, content in messages],
        ensure_ascii=False, separators=(",", ":"),
    )


def content_hash(messages: PromptMessages) -> str:
    return hashlib.sha256(serialize_messages(messages).encode("utf-8")).hexdigest()


def mock_complete(messages: PromptMessages) -> Completion:
    """Pure deterministic stand-in: same messages, same completion, always."""
    return Completion(text="MOCK:" + content_hash(messages)[:16], model_id="mock")


def _resolve_api_key(cfg: ProviderConfig) -> Optional[str]:
    if not cfg.api_key_ref:
        return None
    import os
    key = os.environ.get(cfg.api_key_ref)
    if key is None:
        raise errors.AuthError(f"environment variable {cfg.api_key_ref!r} is not set")
    return key


def complete(cfg: ProviderConfig, messages: PromptMessages,
             params: Optional[dict] = None) -> Completion:
    """POST the standard chat body to {base_url}/chat/completions.

    Transport errors and 429/5xx responses are retried with exponential
    backoff (base 0.5 s, factor 2, jitter +/-20%) up to cfg.max_retries;
    401/403 fail immediately.
    """
    if not messages:
        raise errors.ValidationError("messages must be nonempty")
    params = params or {}
    body = {
        "model": cfg.model_id,
        "messages": [{"role": role, "content": content} for role, content in messages],
        "temperature": params.get("temperature", 0.2),
        "max_tokens": params.get("max_tokens", 512),
    }
    headers = {"Content-Type": "application/json"}
    key = _resolve_api_key(cfg)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    url = cfg.base_url.rstrip("/") + "/chat/completions"

    started = time.monotonic()
    deadline = started + cfg.timeout_s  # total budget across retries
    attempts = 1 + cfg.max_retries
    last_failure: Optional[errors.AianoError] = None
    for attempt in range(attempts):
        if attempt:
            delay = BACKOFF_BASE_S * (BACKOFF_FACTOR ** (attempt - 1))
            delay *= 1.0 + random.uniform(-BACKOFF_JITTER, BACKOFF_JITTER)
            time.sleep(delay)
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            break
        try:
            with _inflight:
                resp = httpx.post(url, json=body, headers=headers, timeout=remaining)
        except httpx.TimeoutException as exc:
            last_failure = errors.Timeout(f"provider timed out after {cfg.timeout_s}s: {exc}")
            logger.warning("provider timeout (attempt %d/%d)", attempt + 1, attempts)
            continue
        except httpx.TransportError as exc:
            last_failure = errors.ProviderError(f"transport error: {exc}")
            logger.warning("provider transport error (attempt %d/%d)", attempt + 1, attempts)
            continue

        if resp.status_code in (401, 403):
            raise errors.AuthError(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            if resp.status_code == 429:
                last_failure = errors.RateLimited("provider rate limit (HTTP 429)", retries=attempt)
            else:
                last_failure = errors.ProviderError(f"provider error HTTP {resp.status_code}", retries=attempt)
            logger.warning("provider HTTP %d (attempt %d/%d)", resp.status_code, attempt + 1, attempts)
            continue
        if resp.status_code != 200:
            raise errors.ProviderError(f"unexpected provider status HTTP {resp.status_code}")

        try:
            payload = resp.json()
            text = payload["choices"][0]["message"]["content"]
            if not isinstance(text, str):
                raise TypeError("content is not a string")
        except Exception:
            raise errors.MalformedResponse("response missing choices[0].message.content")
        usage = None
        if isinstance(payload.get("usage"), dict):
            u = payload["usage"]
            usage = (int(u.get("prompt_tokens", 0)), int(u.get("completion_tokens", 0)))
        return Completion(
            text=text,
            model_id=str(payload.get("model", cfg.model_id)),
            usage=usage,
            latency_ms=int((time.monotonic() - started) * 1000),
        )

    if last_failure is None:
        last_failure = errors.Timeout(f"provider budget of {cfg.timeout_s}s exhausted")
    last_failure.details.setdefault("attempts", attempts)
    raise last_failure


class MockProvider:
    """Provider handle backed by mock_complete; counts calls for tests."""

    model_id = "mock"

    def __init__(self):
        self.calls = 0

    def complete(self, messages: PromptMessages, params: Optional[dict] = None) -> Completion:
        self.calls += 1
        return mock_complete(messages)


class HttpProvider:
    """Provider handle bound to one ProviderConfig."""

    def __init__(self, cfg: ProviderConfig):
        self.cfg = cfg
        self.calls = 0

    @property
    def model_id(self) -> str:
        return self.cfg.model_id

    def complete(self, messages: PromptMessages, params: Optional[dict] = None) -> Completion:
        self.calls += 1
        return complete(self.cfg, messages, params)
