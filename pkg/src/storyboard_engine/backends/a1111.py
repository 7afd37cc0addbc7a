"""Client for the Stable Diffusion web UI's txt2img API mode.

Sends POST /sdapi/v1/txt2img and decodes the base64 PNG that comes back.
The checkpoint (the served model) is a server-side setting and none of
this client's business.
"""

from __future__ import annotations

import base64
import json
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

__all__ = ["A1111ImageBackend"]


class A1111ImageBackend:
    backend_id = "a1111"

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 120.0,
        max_concurrency: int = 4,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.max_concurrency = max_concurrency
        self._client = client or httpx.Client(timeout=timeout)

    def build_payload(self, request: ImageRequest) -> dict:
        """The exact JSON body sent on the wire; split out for contract tests."""
        return {
            "prompt": request.prompt,
            "negative_prompt": request.negative_prompt,
            "seed": request.seed,
            "steps": request.steps,
            "width": request.width,
            "height": request.height,
            "batch_size": 1,
            "n_iter": 1,
        }

    def txt2img(self, request: ImageRequest) -> ImageResult:
        validate_image_request(request)
        started = time.monotonic()
        try:
            response = self._client.post(
                f"{self.base_url}/sdapi/v1/txt2img", json=self.build_payload(request)
            )
        except httpx.HTTPError as err:
            raise TransportError(f"txt2img endpoint unreachable: {err}") from err
        if response.status_code in (401, 403):
            raise AuthError(f"txt2img endpoint rejected credentials ({response.status_code})")
        if response.status_code in (429, 503):
            raise BackendBusyError(f"txt2img endpoint busy ({response.status_code})")
        if response.status_code in (400, 422):
            raise InvalidParametersError(f"txt2img rejected request: {response.text[:200]}")
        if response.status_code >= 400:
            raise TransportError(f"txt2img endpoint returned {response.status_code}")
        latency = (time.monotonic() - started) * 1000.0
        try:
            body = response.json()
            image_bytes = base64.b64decode(body["images"][0])
        except (ValueError, LookupError, TypeError) as err:
            raise TransportError(f"malformed txt2img response: {err}") from err
        return ImageResult(
            image_bytes=image_bytes,
            seed_used=_effective_seed(body, request.seed),
            backend_latency=latency,
        )

    def health_check(self) -> HealthStatus:
        try:
            response = self._client.get(f"{self.base_url}/sdapi/v1/sd-models")
        except httpx.HTTPError as err:
            return HealthStatus(HealthStatus.DOWN, f"transport: {err}")
        if response.status_code >= 400:
            return HealthStatus(HealthStatus.DOWN, f"status {response.status_code}")
        return HealthStatus(HealthStatus.OK)


def _effective_seed(body: dict, requested: int) -> int:
    # The web UI echoes the seed it actually used inside the JSON-encoded
    # "info" string; fall back to the requested one if it is absent.
    info = body.get("info")
    if isinstance(info, str):
        try:
            info = json.loads(info)
        except ValueError:
            info = None
    if isinstance(info, dict) and isinstance(info.get("seed"), int):
        return info["seed"]
    return requested
