"""Shared backend contracts: request/response shapes and the error taxonomy.

Chat and image backends live behind two small interfaces so the pipeline
never sees a wire format. Every failure a backend can surface is one of
the exception types below; the ``retryable`` flag tells callers whether
trying again can help.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Protocol, TypeVar, runtime_checkable

__all__ = [
    "ChatRequest",
    "ImageRequest",
    "ImageResult",
    "HealthStatus",
    "ChatBackend",
    "ImageBackend",
    "BackendError",
    "TransportError",
    "AuthError",
    "ModelRefusalError",
    "BackendBusyError",
    "InvalidParametersError",
    "validate_image_request",
    "with_transport_retries",
]


class BackendError(Exception):
    """Base of every backend failure."""

    retryable = False


class TransportError(BackendError):
    """Network trouble: connect/timeout/5xx/malformed body."""

    retryable = True


class AuthError(BackendError):
    """Credentials rejected. Retrying the same credentials is pointless."""


class ModelRefusalError(BackendError):
    """The model answered with nothing usable (empty or policy-blocked)."""


class BackendBusyError(BackendError):
    """The endpoint is up but shedding load."""

    retryable = True


class InvalidParametersError(BackendError):
    """The request itself is malformed; the backend rejected it outright."""


@dataclass(frozen=True)
class ChatRequest:
    """One chat completion call.

    ``followup_turns`` are extra user messages appended after
    ``user_message``, in order. The pipeline uses them for parse-failure
    corrections and for the style-regeneration nonce.
    """

    system_prompt: str
    user_message: str
    model_id: str = ""
    temperature: float = 1.0
    followup_turns: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.system_prompt.strip():
            raise ValueError("system_prompt must be non-empty")
        if not self.user_message.strip():
            raise ValueError("user_message must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class ImageRequest:
    """One txt2img call. seed -1 asks the backend to pick its own."""

    prompt: str
    negative_prompt: str = ""
    seed: int = -1
    width: int = 512
    height: int = 512
    steps: int = 20


@dataclass(frozen=True)
class ImageResult:
    image_bytes: bytes
    seed_used: int
    backend_latency: float  # milliseconds


def validate_image_request(request: ImageRequest) -> None:
    """Raise InvalidParametersError for requests no backend should see."""
    if not request.prompt.strip():
        raise InvalidParametersError("prompt must be non-empty")
    for name, value in (("width", request.width), ("height", request.height)):
        if value <= 0 or value % 8 != 0:
            raise InvalidParametersError(f"{name} must be a positive multiple of 8, got {value}")
    if request.steps <= 0:
        raise InvalidParametersError(f"steps must be > 0, got {request.steps}")


@dataclass(frozen=True)
class HealthStatus:
    """Probe outcome: ok, degraded(detail), or down(detail)."""

    OK = "ok"
    DEGRADED = "degraded"
    DOWN = "down"

    state: str = OK
    detail: str = ""

    @property
    def is_ok(self) -> bool:
        return self.state == self.OK


@runtime_checkable
class ChatBackend(Protocol):
    backend_id: str

    def chat(self, request: ChatRequest) -> str: ...

    def health_check(self) -> HealthStatus: ...


@runtime_checkable
class ImageBackend(Protocol):
    backend_id: str
    max_concurrency: int

    def txt2img(self, request: ImageRequest) -> ImageResult: ...

    def health_check(self) -> HealthStatus: ...


T = TypeVar("T")


def with_transport_retries(
    fn: Callable[[], T],
    *,
    max_retries: int = 2,
    base_delay: float = 0.5,
    sleep: Callable[[float], None] = time.sleep,
) -> T:
    """Run ``fn``, retrying retryable backend errors with exponential backoff.

    ``max_retries`` counts the extra attempts after the first one.
    """
    attempt = 0
    while True:
        try:
            return fn()
        except BackendError as err:
            if not err.retryable or attempt >= max_retries:
                raise
            sleep(base_delay * (2**attempt))
            attempt += 1
