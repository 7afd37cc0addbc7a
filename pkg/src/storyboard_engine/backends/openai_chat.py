"""OpenAI-compatible chat-completions client.

Speaks the POST /chat/completions shape against any compatible base URL.
Credentials come from an environment variable, never from config files.
Transient transport failures are retried with exponential backoff;
auth rejections and model refusals are surfaced as their own errors so
the pipeline can decide what is worth retrying.
"""

from __future__ import annotations

import os
import time
from typing import Callable

import httpx

from .base import (
    AuthError,
    ChatRequest,
    HealthStatus,
    ModelRefusalError,
    TransportError,
    with_transport_retries,
)

__all__ = ["OpenAIChatBackend"]


class OpenAIChatBackend:
    backend_id = "openai-chat"

    def __init__(
        self,
        base_url: str,
        *,
        model_id: str = "gpt-4",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        max_retries: int = 2,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model_id = model_id
        self.api_key_env = api_key_env
        self.max_retries = max_retries
        self._sleep = sleep
        self._client = client or httpx.Client(timeout=timeout)

    def build_payload(self, request: ChatRequest) -> dict:
        """The exact JSON body sent on the wire; split out for contract tests."""
        messages = [
            {"role": "system", "content": request.system_prompt},
            {"role": "user", "content": request.user_message},
        ]
        for turn in request.followup_turns:
            messages.append({"role": "user", "content": turn})
        return {
            "model": request.model_id or self.model_id,
            "temperature": request.temperature,
            "messages": messages,
        }

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, request: ChatRequest) -> str:
        payload = self.build_payload(request)

        def attempt() -> str:
            try:
                response = self._client.post(
                    f"{self.base_url}/chat/completions", json=payload, headers=self._headers()
                )
            except httpx.HTTPError as err:
                raise TransportError(f"chat endpoint unreachable: {err}") from err
            if response.status_code in (401, 403):
                raise AuthError(f"chat endpoint rejected credentials ({response.status_code})")
            if response.status_code >= 400:
                # 429 and 5xx are transient for a completions endpoint.
                raise TransportError(f"chat endpoint returned {response.status_code}")
            try:
                body = response.json()
                choice = body["choices"][0]
                content = choice["message"]["content"]
                finish = choice.get("finish_reason", "stop")
            except (ValueError, LookupError, TypeError) as err:
                raise TransportError(f"malformed chat response: {err}") from err
            if finish == "content_filter" or not (content or "").strip():
                raise ModelRefusalError(f"model returned no usable reply (finish_reason={finish})")
            return content

        return with_transport_retries(attempt, max_retries=self.max_retries, sleep=self._sleep)

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
