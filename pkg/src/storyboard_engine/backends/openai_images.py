"""OpenAI-style images/generations adapter.

A second image backend for the comparison harness. This endpoint family
has no seed control; the requested seed is echoed back untouched so the
rest of the engine keeps a uniform shape.
"""

from __future__ import annotations

import base64
import os
import time

import httpx

from .base import (
    AuthError,
    BackendBusyError,
    HealthStatus,
    ImageRequest,
    ImageResult,
    InvalidParametersError,
    TransportError,
    validate_image_request,
)

__all__ = ["OpenAIImageBackend"]


class OpenAIImageBackend:
    backend_id = "openai-images"

    def __init__(
        self,
        base_url: str,
        *,
        model_id: str = "dall-e-3",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 120.0,
        max_concurrency: int = 2,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.max_concurrency = max_concurrency
        self._client = client or httpx.Client(timeout=timeout)

    def build_payload(self, request: ImageRequest) -> dict:
        return {
            "model": self.model_id,
            "prompt": request.prompt,
            "n": 1,
            "size": f"{request.width}x{request.height}",
            "response_format": "b64_json",
        }

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def txt2img(self, request: ImageRequest) -> ImageResult:
        validate_image_request(request)
        started = time.monotonic()
        try:
            response = self._client.post(
                f"{self.base_url}/images/generations",
                json=self.build_payload(request),
                headers=self._headers(),
            )
        except httpx.HTTPError as err:
            raise TransportError(f"images endpoint unreachable: {err}") from err
        if response.status_code in (401, 403):
            raise AuthError(f"images endpoint rejected credentials ({response.status_code})")
        if response.status_code == 429:
            raise BackendBusyError("images endpoint busy (429)")
        if response.status_code in (400, 422):
            raise InvalidParametersError(f"images endpoint rejected request: {response.text[:200]}")
        if response.status_code >= 400:
            raise TransportError(f"images endpoint returned {response.status_code}")
        latency = (time.monotonic() - started) * 1000.0
        try:
            body = response.json()
            image_bytes = base64.b64decode(body["data"][0]["b64_json"])
        except (ValueError, LookupError, TypeError) as err:
            raise TransportError(f"malformed images response: {err}") from err
        return ImageResult(image_bytes=image_bytes, seed_used=request.seed, backend_latency=latency)

    def health_check(self) -> HealthStatus:
        try:
            response = self._client.get(f"{self.base_url}/models", headers=self._headers())
        except httpx.HTTPError as err:
            return HealthStatus(HealthStatus.DOWN, f"transport: {err}")
        if response.status_code in (401, 403):
            return HealthStatus(HealthStatus.DOWN, f"auth rejected ({response.status_code})")
        if response.status_code >= 400:
            return HealthStatus(HealthStatus.DEGRADED, f"status {response.status_code}")
        return HealthStatus(HealthStatus.OK)
