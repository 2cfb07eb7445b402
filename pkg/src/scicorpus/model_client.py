"""Chat-model and classifier interfaces.

Ships a scripted mock so the whole pipeline runs hermetically in tests, and
an HTTP adapter speaking the de-facto chat-completions JSON schema
(`messages` array in, `choices` array out) for production teacher models.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from .errors import ConfigurationError, SchemaError

FINISH_STOP = "stop"
FINISH_LENGTH = "length"
FINISH_ERROR = "error"


@dataclass
class ChatRequest:
    messages: list[dict]  # [{"role": "system"|"user", "content": str}, ...]
    temperature: float = 0.0
    max_output_tokens: int = 4096
    model_name: str = "default"
    extra: dict = field(default_factory=dict)  # backend-specific flags, opaque

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not any(m.get("role") == "user" for m in self.messages):
            raise ValueError("request needs at least one user message")

    @classmethod
    def user(cls, content: str, **kwargs) -> "ChatRequest":
        return cls(messages=[{"role": "user", "content": content}], **kwargs)

    def last_user_content(self) -> str:
        for msg in reversed(self.messages):
            if msg.get("role") == "user":
                return msg.get("content", "")
        return ""


@dataclass
class ChatReply:
    content: str
    finish: str = FINISH_STOP
    input_tokens: int = 0
    output_tokens: int = 0
    attempts: int = 1

    @property
    def is_error(self) -> bool:
        return self.finish == FINISH_ERROR


class ChatClient(Protocol):
    def chat(self, req: ChatRequest) -> ChatReply: ...


class TransportError(Exception):
    """Transient transport failure; eligible for retry."""


class ProtocolError(Exception):
    """Non-retryable protocol-level failure."""


# ---------------------------------------------------------------------------
# Retry policy
# ---------------------------------------------------------------------------

@dataclass
class RetryPolicy:
    max_attempts: int = 3
    base_delay: float = 0.5
    max_delay: float = 30.0
    jitter_seed: int = 0
    sleep_fn: Callable[[float], None] = time.sleep

    def delays(self) -> list[float]:
        """Deterministic backoff schedule given the seed."""
        rng = random.Random(self.jitter_seed)
        out = []
        for attempt in range(self.max_attempts - 1):
            delay = min(self.max_delay, self.base_delay * (2**attempt))
            out.append(delay * (0.5 + rng.random() / 2))
        return out


def call_with_retries(fn: Callable[[], ChatReply], policy: RetryPolicy) -> ChatReply:
    """Run `fn`, retrying on TransportError with exponential backoff.

    Returns an error reply after exhausting attempts or on a ProtocolError.
    """
    delays = policy.delays()
    attempts = 0
    for attempt in range(policy.max_attempts):
        attempts += 1
        try:
            reply = fn()
            reply.attempts = attempts
            return reply
        except TransportError:
            if attempt < len(delays):
                policy.sleep_fn(delays[attempt])
            continue
        except ProtocolError as exc:
            return ChatReply(content=str(exc), finish=FINISH_ERROR, attempts=attempts)
    return ChatReply(content="transport retries exhausted", finish=FINISH_ERROR, attempts=attempts)


# ---------------------------------------------------------------------------
# Scripted mock
# ---------------------------------------------------------------------------

def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockChatClient:
    """Scripted chat backend for tests.

    Reply resolution order:
      1. `script`: prompt-hash (sha256 of the last user message) -> reply text
      2. `sequence`: replies consumed one per call; the string "<TRANSPORT_ERROR>"
         raises a TransportError instead (for retry scenarios)
      3. `responder`: callable(prompt) -> reply text
    """

    TRANSPORT_ERROR = "<TRANSPORT_ERROR>"

    def __init__(
        self,
        script: dict[str, str] | None = None,
        sequence: Iterable[str] | None = None,
        responder: Callable[[str], str] | None = None,
        retry_policy: RetryPolicy | None = None,
    ):
        self.script = dict(script or {})
        self.sequence = list(sequence or [])
        self.responder = responder
        self.retry_policy = retry_policy or RetryPolicy(sleep_fn=lambda _s: None)
        self.calls: list[str] = []

    @classmethod
    def from_script_file(cls, path: str) -> "MockChatClient":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(script=data.get("replies"), sequence=data.get("sequence"))

    def _resolve(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        if key in self.script:
            return self.script[key]
        if self.sequence:
            return self.sequence.pop(0)
        if self.responder is not None:
            return self.responder(prompt)
        raise ConfigurationError("mock client has no reply scripted for this prompt")

    def chat(self, req: ChatRequest) -> ChatReply:
        prompt = req.last_user_content()
        self.calls.append(prompt)

        def attempt() -> ChatReply:
            content = self._resolve(prompt)
            if content == self.TRANSPORT_ERROR:
                raise TransportError("scripted transport failure")
            return ChatReply(
                content=content,
                input_tokens=len(prompt.split()),
                output_tokens=len(content.split()),
            )

        return call_with_retries(attempt, self.retry_policy)


class IdentityChatClient:
    """Echoes the substituted chunk back, optionally wrapped by a formatter.

    Useful as a no-op teacher: stage output equals stage input.
    """

    def __init__(self, formatter: Callable[[str], str] | None = None):
        self.formatter = formatter

    def chat(self, req: ChatRequest) -> ChatReply:
        content = req.last_user_content()
        if self.formatter is not None:
            content = self.formatter(content)
        return ChatReply(content=content)


# ---------------------------------------------------------------------------
# HTTP adapter (chat-completions schema)
# ---------------------------------------------------------------------------

class HttpChatClient:
    """POSTs {model, messages, temperature, max_tokens} to `endpoint` and
    reads choices[0].message.content. 5xx and connection errors retry with
    backoff; 4xx is a protocol error."""

    def __init__(
        self,
        endpoint: str,
        model_name: str = "default",
        auth_token: str | None = None,
        timeout: float = 300.0,
        retry_policy: RetryPolicy | None = None,
        session=None,
    ):
        import requests

        self.endpoint = endpoint
        self.model_name = model_name
        self.auth_token = auth_token
        self.timeout = timeout
        self.retry_policy = retry_policy or RetryPolicy()
        self.session = session or requests.Session()
        self._requests = requests

    def chat(self, req: ChatRequest) -> ChatReply:
        payload = {
            "model": req.model_name or self.model_name,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        payload.update(req.extra)
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"

        def attempt() -> ChatReply:
            try:
                resp = self.session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except self._requests.RequestException as exc:
                raise TransportError(str(exc))
            if resp.status_code >= 500:
                raise TransportError(f"server error {resp.status_code}")
            if resp.status_code >= 400:
                raise ProtocolError(f"request rejected: {resp.status_code} {resp.text[:200]}")
            try:
                body = resp.json()
                choice = body["choices"][0]
                content = choice["message"]["content"]
                finish = choice.get("finish_reason", FINISH_STOP)
            except (ValueError, KeyError, IndexError) as exc:
                raise ProtocolError(f"malformed completion response: {exc}")
            usage = body.get("usage", {})
            return ChatReply(
                content=content,
                finish=FINISH_LENGTH if finish == "length" else FINISH_STOP,
                input_tokens=usage.get("prompt_tokens", 0),
                output_tokens=usage.get("completion_tokens", 0),
            )

        return call_with_retries(attempt, self.retry_policy)


# ---------------------------------------------------------------------------
# Document classifier interface
# ---------------------------------------------------------------------------

# The twelve label dimensions attached to every classified document.
LABEL_DIMENSIONS = (
    "fdc_code",
    "doc_type_v1",
    "doc_type_v2",
    "content_quality",
    "educational_value",
    "technical_depth",
    "reasoning_depth",
    "target_audience",
    "extraction_artifacts",
    "missing_content",
    "text_structure",
    "language_fluency",
)


class ClassifierClient(Protocol):
    def classify(self, text: str) -> dict[str, str]: ...


def validate_label_set(labels: dict, dimensions: tuple[str, ...] = LABEL_DIMENSIONS) -> dict[str, str]:
    """Require exactly the configured dimension names."""
    missing = [d for d in dimensions if d not in labels]
    if missing:
        raise SchemaError(f"classifier reply missing dimensions: {missing}")
    extra = [k for k in labels if k not in dimensions]
    if extra:
        raise SchemaError(f"classifier reply has unknown dimensions: {extra}")
    return {k: str(v) for k, v in labels.items()}


class ScriptedClassifier:
    """Test classifier: labels keyed by document text, or a default label set.

    `fail_on`: texts for which classify raises a TransportError.
    """

    def __init__(
        self,
        by_text: dict[str, dict] | None = None,
        default: dict | None = None,
        fail_on: set[str] | None = None,
        dimensions: tuple[str, ...] = LABEL_DIMENSIONS,
    ):
        self.by_text = by_text or {}
        self.default = default
        self.fail_on = fail_on or set()
        self.dimensions = dimensions

    def classify(self, text: str) -> dict[str, str]:
        if text in self.fail_on:
            raise TransportError("scripted classifier failure")
        labels = self.by_text.get(text, self.default)
        if labels is None:
            raise ConfigurationError("no scripted labels for this text")
        return validate_label_set(labels, self.dimensions)

    def classify_batch(self, texts: list[str]) -> list[dict[str, str]]:
        return [self.classify(t) for t in texts]


def default_labels(**overrides) -> dict[str, str]:
    """A fully populated label set for fixtures; override what matters."""
    labels = {
        "fdc_code": "500",
        "doc_type_v1": "Academic",
        "doc_type_v2": "Research",
        "content_quality": "high",
        "educational_value": "high",
        "technical_depth": "advanced",
        "reasoning_depth": "deep",
        "target_audience": "expert",
        "extraction_artifacts": "none",
        "missing_content": "none",
        "text_structure": "prose",
        "language_fluency": "fluent",
    }
    labels.update({k: str(v) for k, v in overrides.items()})
    return labels
