"""Pluggable language-model and similarity backend.

Two backends behind one interface: a live HTTP chat-completions client, and a
scripted backend whose answers are a pure function of the prompt, so every
pipeline behavior is testable offline.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Optional

import httpx

from surveyforge import prompts
from surveyforge.errors import BackendUnavailable, ScriptMiss
from surveyforge.state import hash_args

logger = logging.getLogger(__name__)

ENV_BASE_URL = "SF_MODEL_BASE_URL"
ENV_MODEL_NAME = "SF_MODEL_NAME"
ENV_API_KEY = "SF_MODEL_API_KEY"
ENV_BACKEND = "SF_BACKEND"

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_OUTPUT_TOKENS = 2048


@dataclass
class PromptRequest:
    template_id: str
    variables: dict[str, str]
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if self.template_id not in prompts.REGISTRY:
            raise KeyError(f"unknown template id {self.template_id!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    def render(self) -> str:
        """Template text with all placeholders bound; raises before any network use."""
        return prompts.REGISTRY[self.template_id].render(self.variables)

    def fixture_key(self) -> str:
        return f"{self.template_id}:{hash_args(self.variables)}"


@dataclass
class Completion:
    text: str
    finish_reason: str = "stop"  # stop | length | error
    usage: dict = field(default_factory=lambda: {"input_tokens": 0, "output_tokens": 0})


class ScriptedBackend:
    """Deterministic backend: fixture table first, template fallback second.

    The fixture table is read-only after load. A miss with no declared
    fallback raises ScriptMiss rather than fabricating an answer.
    """

    name = "scripted"

    def __init__(self, fixtures: Optional[dict[str, str]] = None):
        self._fixtures = dict(fixtures or {})

    @classmethod
    def from_file(cls, path: str) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh))

    def complete(self, request: PromptRequest) -> Completion:
        request.render()  # precondition: all placeholders bound
        key = request.fixture_key()
        if key in self._fixtures:
            return Completion(text=self._fixtures[key])
        template = prompts.REGISTRY[request.template_id]
        if template.fallback is None:
            raise ScriptMiss(f"no fixture for {key} and template declares no fallback")
        return Completion(text=template.fallback(request.variables))


class LiveBackend:
    """OpenAI-compatible chat-completions client with bounded retries."""

    name = "live"
    RETRIES = 3

    def __init__(self, base_url: Optional[str] = None, model: Optional[str] = None,
                 api_key: Optional[str] = None, client: Optional[httpx.Client] = None):
        self.base_url = (base_url or os.environ.get(ENV_BASE_URL, "")).rstrip("/")
        self.model = model or os.environ.get(ENV_MODEL_NAME, "")
        self.api_key = api_key or os.environ.get(ENV_API_KEY, "")
        if not self.base_url or not self.model:
            raise BackendUnavailable(
                f"live backend needs {ENV_BASE_URL} and {ENV_MODEL_NAME} configured")
        self._client = client or httpx.Client(timeout=120.0)

    def complete(self, request: PromptRequest) -> Completion:
        prompt_text = request.render()  # raises on unbound placeholders, pre-network
        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt_text}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = 0.5
        last_error: Optional[Exception] = None
        for attempt in range(self.RETRIES):
            try:
                http_response = self._client.post(
                    f"{self.base_url}/chat/completions", json=payload, headers=headers)
                http_response.raise_for_status()
                body = http_response.json()
                choice = body["choices"][0]
                return Completion(
                    text=choice["message"]["content"],
                    finish_reason=choice.get("finish_reason", "stop"),
                    usage=body.get("usage", {}),
                )
            except (httpx.HTTPError, KeyError, IndexError, json.JSONDecodeError) as exc:
                last_error = exc
                logger.warning("live completion attempt %d failed: %s", attempt + 1, exc)
                if attempt < self.RETRIES - 1:
                    time.sleep(delay)
                    delay *= 2
        raise BackendUnavailable(f"live backend failed after {self.RETRIES} attempts: {last_error}")


def similarity(a: str, b: str) -> float:
    """Topical similarity in [0, 1]: Jaccard over lowercased alphanumeric tokens.

    Symmetric, with similarity(x, x) == 1. Embedding-based backends can
    replace this behind the same signature; the default stays dependency-free.
    """
    if not a.strip() or not b.strip():
        raise ValueError("similarity requires two non-empty strings")
    return prompts.jaccard(a, b)


def backend_from_env(fixtures_path: Optional[str] = None):
    """Build the backend selected by SF_BACKEND (default scripted)."""
    kind = os.environ.get(ENV_BACKEND, "scripted")
    if kind == "scripted":
        if fixtures_path and os.path.exists(fixtures_path):
            return ScriptedBackend.from_file(fixtures_path)
        return ScriptedBackend()
    if kind == "live":
        return LiveBackend()
    raise BackendUnavailable(f"unknown backend kind {kind!r}")
