"""Narrative-to-storyboard generation engine.

Turns a free-form story into a sequence of rendered frames by chaining
two chat-model calls (style extraction, then per-frame parameterized
prompts) into a text-to-image backend, and keeps the whole storyboard
editable afterwards: every mutation is an event, every event replays.
"""

from .core import (
    FramePrompt,
    FrameRecord,
    FrameStatus,
    GenerationConfig,
    SeedPolicy,
    StoryboardProject,
    StyleParameters,
    new_project,
    validate_project,
)
from .pipeline import Pipeline, PipelineEvent, apply_event, replay_events

__all__ = [
    "FramePrompt",
    "FrameRecord",
    "FrameStatus",
    "GenerationConfig",
    "SeedPolicy",
    "StoryboardProject",
    "StyleParameters",
    "new_project",
    "validate_project",
    "Pipeline",
    "PipelineEvent",
    "apply_event",
    "replay_events",
]
