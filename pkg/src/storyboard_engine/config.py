"""Runtime settings for the service and CLI.

Per-setting precedence: explicit overrides (command-line flags), then
environment variables, then a JSON config file, then defaults. The
config file holds endpoint URLs and storage paths; credentials stay in
environment variables only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .backends import (
    A1111ImageBackend,
    ChatBackend,
    ImageBackend,
    MockChatBackend,
    MockImageBackend,
    OpenAIChatBackend,
    OpenAIImageBackend,
)

__all__ = ["Settings", "load_settings", "make_chat_backend", "make_image_backend"]

CONFIG_ENV = "STORYBOARD_CONFIG"
DEFAULT_CONFIG_FILE = "storyboard.config.json"

# dataclass field -> environment variable
_ENV_VARS = {
    "data_dir": "STORYBOARD_DATA_DIR",
    "mock_backends": "STORYBOARD_MOCK",
    "mock_seed": "STORYBOARD_MOCK_SEED",
    "chat_base_url": "STORYBOARD_CHAT_URL",
    "chat_api_key_env": "STORYBOARD_CHAT_KEY_ENV",
    "text_model_id": "STORYBOARD_TEXT_MODEL",
    "image_backend": "STORYBOARD_IMAGE_BACKEND",
    "image_base_url": "STORYBOARD_IMAGE_URL",
    "image_model_id": "STORYBOARD_IMAGE_MODEL",
    "host": "STORYBOARD_HOST",
    "port": "STORYBOARD_PORT",
    "static_dir": "STORYBOARD_STATIC_DIR",
}

_TRUTHY = {"1", "true", "yes", "on"}


@dataclass
class Settings:
    data_dir: str = "storyboard-data"
    mock_backends: bool = False
    mock_seed: int = 0
    chat_base_url: str = "https://api.openai.com/v1"
    chat_api_key_env: str = "OPENAI_API_KEY"
    text_model_id: str = "gpt-4"
    image_backend: str = "a1111"
    image_base_url: str = "http://127.0.0.1:7860"
    image_model_id: str = "dall-e-3"
    host: str = "127.0.0.1"
    port: int = 8000
    static_dir: str = ""


def _coerce(name: str, value, kind: type):
    if kind is bool:
        if isinstance(value, bool):
            return value
        return str(value).strip().lower() in _TRUTHY
    if kind is int:
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ValueError(f"setting {name!r} must be an integer, got {value!r}") from None
    return str(value)


def load_settings(
    config_path: str | Path | None = None,
    *,
    env: dict | None = None,
    overrides: dict | None = None,
) -> Settings:
    """Resolve settings with flag > env > config file > default precedence.

    ``overrides`` holds flag values (None entries are treated as unset).
    """
    env = os.environ if env is None else env
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}

    file_values: dict = {}
    path = config_path or env.get(CONFIG_ENV) or ""
    if not path and Path(DEFAULT_CONFIG_FILE).exists():
        path = DEFAULT_CONFIG_FILE
    if path:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        file_values = raw

    values = {}
    for spec in fields(Settings):
        if spec.name in overrides:
            source = overrides[spec.name]
        elif _ENV_VARS.get(spec.name) in env:
            source = env[_ENV_VARS[spec.name]]
        elif spec.name in file_values:
            source = file_values[spec.name]
        else:
            continue
        values[spec.name] = _coerce(spec.name, source, spec.type if isinstance(spec.type, type) else type(spec.default))
    unknown = set(file_values) - {spec.name for spec in fields(Settings)}
    if unknown:
        raise ValueError(f"unknown settings in config file: {sorted(unknown)}")
    return Settings(**values)


def make_chat_backend(settings: Settings) -> ChatBackend:
    if settings.mock_backends:
        return MockChatBackend(mock_seed=settings.mock_seed)
    return OpenAIChatBackend(
        settings.chat_base_url,
        model_id=settings.text_model_id,
        api_key_env=settings.chat_api_key_env,
    )


def make_image_backend(settings: Settings, name: str | None = None) -> ImageBackend:
    """Build an image backend by name ("mock", "a1111", "openai-images").

    Without a name, settings decide: the mock when mock_backends is set,
    otherwise settings.image_backend.
    """
    if name is None:
        name = "mock" if settings.mock_backends else settings.image_backend
    if name == "mock":
        return MockImageBackend()
    if name == "a1111":
        return A1111ImageBackend(settings.image_base_url)
    if name == "openai-images":
        return OpenAIImageBackend(
            settings.image_base_url,
            model_id=settings.image_model_id,
            api_key_env=settings.chat_api_key_env,
        )
    raise ValueError(f"unknown image backend {name!r} (choose mock, a1111, or openai-images)")
