"""Shared fixtures: scripted backends, a tick clock, and seeded pipelines.

The scripted backends exist so failure paths are reachable on demand;
they stay deterministic under the pipeline's thread fan-out by keying
behavior on the request content, never on call order.
"""

from __future__ import annotations

import threading

import pytest

from storyboard_engine.backends.base import (
    BackendError,
    HealthStatus,
    TransportError,
)
from storyboard_engine.backends.mock import MockChatBackend, MockImageBackend
from storyboard_engine.pipeline import MemoryImageStore, Pipeline

STORY = "Cindy, a little girl, does her homework at night while a storm rolls in."

ACCEPTANCE_LINES: list[str] = []


class TickClock:
    """Deterministic time source: each call advances by a fixed step."""

    def __init__(self, start: float = 1_700_000_000.0, step: float = 1.0):
        self.now = start
        self.step = step
        self._lock = threading.Lock()

    def __call__(self) -> float:
        with self._lock:
            self.now += self.step
            return self.now


class ScriptedChatBackend:
    """Replays a fixed list of replies (or raises scripted exceptions)
    and records every request it saw."""

    backend_id = "scripted-chat"

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def chat(self, request) -> str:
        self.requests.append(request)
        if not self.replies:
            raise AssertionError("scripted chat backend ran out of replies")
        item = self.replies.pop(0)
        if isinstance(item, Exception):
            raise item
        return item

    def health_check(self) -> HealthStatus:
        return HealthStatus(HealthStatus.OK)


class FailingImageBackend:
    """Always fails; optionally only for prompts matching a predicate,
    delegating the rest to the deterministic mock."""

    backend_id = "failing-image"

    def __init__(self, error_factory=None, *, only_if=None, max_concurrency: int = 2):
        self.error_factory = error_factory or (lambda: TransportError("image endpoint unreachable"))
        self.only_if = only_if
        self.max_concurrency = max_concurrency
        self._inner = MockImageBackend()
        self.calls = 0
        self._lock = threading.Lock()

    def txt2img(self, request):
        with self._lock:
            self.calls += 1
        if self.only_if is None or self.only_if(request.prompt):
            raise self.error_factory()
        return self._inner.txt2img(request)

    def health_check(self) -> HealthStatus:
        return HealthStatus(HealthStatus.DOWN, "scripted failure")


class FlakyImageBackend:
    """Fails the first ``fail_attempts`` calls for each distinct prompt,
    then succeeds via the mock. Keyed per prompt so concurrent call order
    cannot change the outcome."""

    backend_id = "flaky-image"

    def __init__(self, fail_attempts: int = 1, error_factory=None, max_concurrency: int = 2):
        self.fail_attempts = fail_attempts
        self.error_factory = error_factory or (lambda: TransportError("transient image failure"))
        self.max_concurrency = max_concurrency
        self._inner = MockImageBackend()
        self._counts: dict[str, int] = {}
        self._lock = threading.Lock()

    def txt2img(self, request):
        with self._lock:
            attempt = self._counts.get(request.prompt, 0) + 1
            self._counts[request.prompt] = attempt
        if attempt <= self.fail_attempts:
            raise self.error_factory()
        return self._inner.txt2img(request)

    def health_check(self) -> HealthStatus:
        return HealthStatus(HealthStatus.DEGRADED, "scripted flakiness")


@pytest.fixture(autouse=True)
def _clean_settings_env(monkeypatch):
    # Host environment must not leak into settings resolution.
    import os

    for name in list(os.environ):
        if name.startswith("STORYBOARD_"):
            monkeypatch.delenv(name)


@pytest.fixture
def clock():
    return TickClock()


@pytest.fixture
def pipeline(clock):
    import random

    return Pipeline(
        MockChatBackend(),
        MockImageBackend(),
        MemoryImageStore(),
        clock=clock,
        rng=random.Random(1234),
    )


@pytest.fixture
def project(pipeline):
    return pipeline.create_project(STORY)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


__all__ = [
    "ACCEPTANCE_LINES",
    "STORY",
    "BackendError",
    "FailingImageBackend",
    "FlakyImageBackend",
    "ScriptedChatBackend",
    "TickClock",
]
