"""Model-endpoint clients and their deterministic mock twins."""

from .a1111 import A1111ImageBackend
from .base import (
    AuthError,
    BackendBusyError,
    BackendError,
    ChatBackend,
    ChatRequest,
    HealthStatus,
    ImageBackend,
    ImageRequest,
    ImageResult,
    InvalidParametersError,
    ModelRefusalError,
    TransportError,
    validate_image_request,
    with_transport_retries,
)
from .mock import MockChatBackend, MockImageBackend
from .openai_chat import OpenAIChatBackend
from .openai_images import OpenAIImageBackend

__all__ = [
    "AuthError",
    "BackendBusyError",
    "BackendError",
    "ChatBackend",
    "ChatRequest",
    "HealthStatus",
    "ImageBackend",
    "ImageRequest",
    "ImageResult",
    "InvalidParametersError",
    "ModelRefusalError",
    "TransportError",
    "validate_image_request",
    "with_transport_retries",
    "MockChatBackend",
    "MockImageBackend",
    "OpenAIChatBackend",
    "A1111ImageBackend",
    "OpenAIImageBackend",
]
