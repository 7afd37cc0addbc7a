"""Three-step generation orchestration and the edit-loop state machine.

Story goes to style, story plus style go to N frame prompts, frame
prompts go to images. Around that sit the edit operations: Resubmit,
Regenerate Style, Reset, story edits, per-frame prompt edits in both
views, and per-frame regeneration.

Every state change is an event. Operations never mutate a project
directly; they compute payloads, then feed them through ``apply_event``,
the same function ``replay_events`` folds over the log. Replaying a
project's full log therefore reproduces its live state exactly, by
construction.

Concurrency: operations on one project serialize on a per-project lock;
distinct projects proceed in parallel. Within resubmit, image requests
fan out to a thread pool capped by the backend's concurrency limit and
join before any post-state is committed.
"""

from __future__ import annotations

import copy
import hashlib
import logging
import random
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol

from . import promptkit
from .backends.base import BackendError, ChatBackend, ChatRequest, ImageBackend, ImageRequest
from .core import (
    FramePrompt,
    FrameRecord,
    FrameStatus,
    GenerationConfig,
    LineageEntry,
    StoryboardProject,
    StyleParameters,
    frame_prompt_violations,
    resize_frames,
)

__all__ = [
    "EVENT_KINDS",
    "PipelineEvent",
    "PipelineError",
    "PreconditionError",
    "IndexOutOfRangeError",
    "UnknownProjectError",
    "ParseExhaustedError",
    "MemoryImageStore",
    "Pipeline",
    "apply_event",
    "replay_events",
    "chat_structured",
]

log = logging.getLogger(__name__)

PROJECT_CREATED = "project-created"
STYLE_GENERATED = "style-generated"
STYLE_REGENERATED = "style-regenerated"
STYLE_RESET = "style-reset"
STYLE_EDITED = "style-edited"
PROMPTS_GENERATED = "prompts-generated"
FRAME_RENDERED = "frame-rendered"
FRAME_RENDER_FAILED = "frame-render-failed"
FRAME_REGENERATED = "frame-regenerated"
FRAME_PROMPT_EDITED = "frame-prompt-edited"
FRAME_NL_EDITED = "frame-nl-edited"
STORY_EDITED = "story-edited"
FRAME_COUNT_CHANGED = "frame-count-changed"

EVENT_KINDS = (
    PROJECT_CREATED,
    STYLE_GENERATED,
    STYLE_REGENERATED,
    STYLE_RESET,
    STYLE_EDITED,
    PROMPTS_GENERATED,
    FRAME_RENDERED,
    FRAME_RENDER_FAILED,
    FRAME_REGENERATED,
    FRAME_PROMPT_EDITED,
    FRAME_NL_EDITED,
    STORY_EDITED,
    FRAME_COUNT_CHANGED,
)


class PipelineError(Exception):
    """Base for orchestration-level failures (backend errors pass through)."""


class PreconditionError(PipelineError):
    """The operation's stated precondition does not hold."""


class IndexOutOfRangeError(PipelineError):
    def __init__(self, index: int, frame_count: int):
        super().__init__(f"frame index {index} out of range for {frame_count} frames")
        self.index = index


class UnknownProjectError(PipelineError):
    def __init__(self, project_id: str):
        super().__init__(f"unknown project {project_id!r}")
        self.project_id = project_id


class ParseExhaustedError(PipelineError):
    """The model never produced a parseable reply within the retry budget."""

    def __init__(self, attempts: int, last_error: promptkit.ParseError):
        super().__init__(f"reply unparseable after {attempts} attempts: {last_error}")
        self.attempts = attempts
        self.last_error = last_error


@dataclass
class PipelineEvent:
    """One log entry: what changed on which project, with enough payload
    to re-apply the change without any backend access."""

    project_id: str
    kind: str
    payload: dict
    timestamp: float

    def to_dict(self) -> dict:
        return {
            "project_id": self.project_id,
            "kind": self.kind,
            "payload": self.payload,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineEvent":
        return cls(
            project_id=data["project_id"],
            kind=data["kind"],
            payload=data["payload"],
            timestamp=data["timestamp"],
        )


class ImageStoreLike(Protocol):
    def put(self, data: bytes) -> str: ...

    def get(self, ref: str) -> bytes: ...

    def __contains__(self, ref: str) -> bool: ...


class MemoryImageStore:
    """In-process content-addressed blob store (the disk twin lives in store)."""

    def __init__(self):
        self._blobs: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def put(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        with self._lock:
            self._blobs[ref] = data
        return ref

    def get(self, ref: str) -> bytes:
        with self._lock:
            return self._blobs[ref]

    def __contains__(self, ref: str) -> bool:
        with self._lock:
            return ref in self._blobs


def _mark_all_stale(project: StoryboardProject) -> None:
    # A story or style change invalidates every prompt derived from it.
    for frame in project.frames:
        if frame.status != FrameStatus.EMPTY:
            frame.status = FrameStatus.STALE


def apply_event(project: StoryboardProject, event: PipelineEvent) -> StoryboardProject:
    """Apply one event to a project in place and return it.

    This is the single place state transitions happen; live operations
    and log replay both go through it.
    """
    payload = event.payload
    kind = event.kind

    if kind == PROJECT_CREATED:
        config = GenerationConfig.from_dict(payload["config"])
        project.id = payload["project_id"]
        project.narrative = payload["narrative"]
        project.style = None
        project.frames = [FrameRecord(index=i) for i in range(config.frame_count)]
        project.config = config
        project.created_at = event.timestamp
    elif kind in (STYLE_GENERATED, STYLE_REGENERATED, STYLE_EDITED):
        project.style = StyleParameters.from_dict(payload["style"])
        _mark_all_stale(project)
    elif kind == STYLE_RESET:
        if project.style is not None:
            project.style = StyleParameters()
            _mark_all_stale(project)
    elif kind == STORY_EDITED:
        project.narrative = payload["narrative"]
        _mark_all_stale(project)
    elif kind == PROMPTS_GENERATED:
        for frame, prompt_data in zip(project.frames, payload["prompts"]):
            frame.prompt = FramePrompt.from_dict(prompt_data)
            frame.error = ""
            frame.status = FrameStatus.STALE if frame.image_ref else FrameStatus.PROMPT_READY
    elif kind in (FRAME_RENDERED, FRAME_REGENERATED):
        frame = project.frames[payload["index"]]
        frame.seed = payload["seed"]
        frame.image_ref = payload["image_ref"]
        frame.status = FrameStatus.RENDERED
        frame.error = ""
        frame.lineage.append(
            LineageEntry(timestamp=event.timestamp, trigger=payload["trigger"], image_ref=payload["image_ref"])
        )
    elif kind == FRAME_RENDER_FAILED:
        frame = project.frames[payload["index"]]
        frame.error = payload["error"]
        frame.status = FrameStatus.STALE if frame.image_ref else FrameStatus.PROMPT_READY
    elif kind in (FRAME_PROMPT_EDITED, FRAME_NL_EDITED):
        frame = project.frames[payload["index"]]
        frame.prompt = FramePrompt.from_dict(payload["prompt"])
        frame.error = ""
        frame.status = FrameStatus.STALE if frame.image_ref else FrameStatus.PROMPT_READY
    elif kind == FRAME_COUNT_CHANGED:
        resize_frames(project, payload["frame_count"])
    else:
        raise ValueError(f"unknown event kind {kind!r}")

    project.updated_at = event.timestamp
    return project


def chat_structured(
    chat_backend: ChatBackend,
    system_prompt: str,
    user_message: str,
    parse,
    *,
    model_id: str = "",
    max_retries: int = 2,
    base_followups: tuple[str, ...] = (),
):
    """Call chat and parse the reply, re-asking with a corrective user turn
    on grammar failures up to ``max_retries`` times.

    Returns (parsed value, retry count). Raises ParseExhaustedError once
    the budget is spent; backend errors pass through untouched.
    """
    followups = list(base_followups)
    retries = 0
    while True:
        request = ChatRequest(
            system_prompt=system_prompt,
            user_message=user_message,
            model_id=model_id,
            followup_turns=tuple(followups),
        )
        raw = chat_backend.chat(request)
        try:
            return parse(raw), retries
        except promptkit.ParseError as err:
            if retries >= max_retries:
                raise ParseExhaustedError(retries + 1, err) from err
            log.warning("reply failed to parse (%s), re-asking", err)
            followups.append(promptkit.corrective_message(err))
            retries += 1


def _shell_project() -> StoryboardProject:
    # Placeholder overwritten by the project-created event during replay.
    return StoryboardProject(
        id="", narrative="", style=None, frames=[], config=GenerationConfig(), created_at=0.0, updated_at=0.0
    )


def replay_events(
    events: list[PipelineEvent] | tuple[PipelineEvent, ...],
    base: StoryboardProject | None = None,
) -> StoryboardProject:
    """Fold a project's event log into the state it describes.

    With no ``base``, the log must start with its project-created event.
    A supplied ``base`` is deep-copied, never mutated.
    """
    events = list(events)
    if base is not None:
        project = copy.deepcopy(base)
    elif events and events[0].kind == PROJECT_CREATED:
        project = _shell_project()
    else:
        raise ValueError("event log does not start with project-created and no base was given")
    for event in events:
        apply_event(project, event)
    return project


@dataclass
class _ProjectEntry:
    project: StoryboardProject
    events: list[PipelineEvent] = field(default_factory=list)
    lock: threading.RLock = field(default_factory=threading.RLock)


class Pipeline:
    """Orchestrates backends and owns the event logs of its projects."""

    def __init__(
        self,
        chat_backend: ChatBackend,
        image_backend: ImageBackend,
        image_store: ImageStoreLike | None = None,
        *,
        clock: Callable[[], float] = time.time,
        id_factory: Callable[[], str] | None = None,
        rng: random.Random | None = None,
    ):
        self.chat_backend = chat_backend
        self.image_backend = image_backend
        self.image_store = image_store if image_store is not None else MemoryImageStore()
        self._clock = clock
        self._id_factory = id_factory if id_factory is not None else (lambda: uuid.uuid4().hex)
        self._rng = rng if rng is not None else random.Random()
        self._rng_lock = threading.Lock()
        self._entries: dict[str, _ProjectEntry] = {}
        self._registry_lock = threading.Lock()

    # -- registry ----------------------------------------------------------

    def create_project(self, narrative: str, config: GenerationConfig | None = None) -> StoryboardProject:
        if not narrative.strip():
            raise PreconditionError("narrative must be non-empty")
        config = config if config is not None else GenerationConfig()
        project = _shell_project()
        event = PipelineEvent(
            project_id=self._id_factory(),
            kind=PROJECT_CREATED,
            payload={"project_id": "", "narrative": narrative, "config": config.to_dict()},
            timestamp=self._clock(),
        )
        event.payload["project_id"] = event.project_id
        apply_event(project, event)
        entry = _ProjectEntry(project=project, events=[event])
        with self._registry_lock:
            self._entries[project.id] = entry
        return project

    def adopt(self, project: StoryboardProject, events: list[PipelineEvent] | None = None) -> None:
        """Register a project that exists already (typically loaded from disk).

        Without its real event log, a synthetic creation event is built
        from the project's own fields; replay support then starts from
        the adopted state rather than the true beginning.
        """
        if events is None or not events:
            events = [
                PipelineEvent(
                    project_id=project.id,
                    kind=PROJECT_CREATED,
                    payload={
                        "project_id": project.id,
                        "narrative": project.narrative,
                        "config": project.config.to_dict(),
                    },
                    timestamp=project.created_at,
                )
            ]
        with self._registry_lock:
            self._entries[project.id] = _ProjectEntry(project=project, events=list(events))

    def get(self, project_id: str) -> StoryboardProject:
        return self._entry_by_id(project_id).project

    def project_ids(self) -> list[str]:
        with self._registry_lock:
            return list(self._entries)

    def event_log(self, project: StoryboardProject) -> tuple[PipelineEvent, ...]:
        return tuple(self._entry(project).events)

    def snapshot(self, project: StoryboardProject) -> tuple[StoryboardProject, tuple[PipelineEvent, ...]]:
        """A consistent (deep copy, event log) pair taken under the project lock."""
        entry = self._entry(project)
        with entry.lock:
            return copy.deepcopy(project), tuple(entry.events)

    def _entry_by_id(self, project_id: str) -> _ProjectEntry:
        with self._registry_lock:
            entry = self._entries.get(project_id)
        if entry is None:
            raise UnknownProjectError(project_id)
        return entry

    def _entry(self, project: StoryboardProject) -> _ProjectEntry:
        entry = self._entry_by_id(project.id)
        if entry.project is not project:
            raise UnknownProjectError(project.id)
        return entry

    # -- event plumbing ------------------------------------------------------

    def _append(self, entry: _ProjectEntry, kind: str, payload: dict) -> PipelineEvent:
        event = PipelineEvent(
            project_id=entry.project.id, kind=kind, payload=payload, timestamp=self._clock()
        )
        apply_event(entry.project, event)
        entry.events.append(event)
        return event

    def _draw_seed(self) -> int:
        with self._rng_lock:
            return self._rng.getrandbits(31)

    def _resubmit_seed(self, project: StoryboardProject) -> int:
        policy = project.config.seed_policy
        if policy.kind == "fixed":
            return policy.seed
        return self._draw_seed()

    def _rerender_seed(self, project: StoryboardProject, frame: FrameRecord) -> int:
        policy = project.config.seed_policy
        if policy.kind == "fixed":
            return policy.seed
        if policy.kind == "random-per-frame" and frame.seed >= 0:
            return frame.seed
        return self._draw_seed()

    # -- chat with parse retries ---------------------------------------------

    def _chat_structured(self, project: StoryboardProject, user_message: str, system_prompt: str, parse, base_followups: tuple[str, ...] = ()):
        return chat_structured(
            self.chat_backend,
            system_prompt,
            user_message,
            parse,
            model_id=project.config.text_model_id,
            max_retries=project.config.max_parse_retries,
            base_followups=base_followups,
        )

    # -- style operations ------------------------------------------------------

    def generate_style(self, project: StoryboardProject) -> StyleParameters:
        entry = self._entry(project)
        with entry.lock:
            return self._generate_style_locked(entry)

    def _generate_style_locked(self, entry: _ProjectEntry, *, regenerate: bool = False) -> StyleParameters:
        project = entry.project
        if not project.narrative.strip():
            raise PreconditionError("narrative must be non-empty")
        followups: tuple[str, ...] = ()
        kind = STYLE_GENERATED
        payload: dict = {}
        if regenerate:
            kind = STYLE_REGENERATED
            nonce = 1 + sum(1 for e in entry.events if e.kind == STYLE_REGENERATED)
            followups = (
                f"Please generate a different style for the same story (variation {nonce}).",
            )
            payload["nonce"] = nonce
        style, retries = self._chat_structured(
            project,
            project.narrative,
            promptkit.build_style_system_prompt(),
            promptkit.parse_style_reply,
            base_followups=followups,
        )
        payload.update(style=style.to_dict(), retry_count=retries)
        self._append(entry, kind, payload)
        return copy.deepcopy(style)

    def regenerate_style(self, project: StoryboardProject) -> StyleParameters:
        entry = self._entry(project)
        with entry.lock:
            return self._generate_style_locked(entry, regenerate=True)

    def reset_style(self, project: StoryboardProject) -> None:
        entry = self._entry(project)
        with entry.lock:
            self._append(entry, STYLE_RESET, {"had_style": project.style is not None})

    def edit_style(self, project: StoryboardProject, style: StyleParameters) -> None:
        entry = self._entry(project)
        with entry.lock:
            self._append(entry, STYLE_EDITED, {"style": style.to_dict()})

    # -- generation --------------------------------------------------------------

    def resubmit(self, project: StoryboardProject) -> list[FrameRecord]:
        """Regenerate everything: style if absent or blank, then all prompts,
        then all images.

        Failures during rendering are committed per frame as error notes;
        the other frames still land. Chat/parse failures before any frame
        is touched propagate and leave the project unchanged.
        """
        entry = self._entry(project)
        with entry.lock:
            if not project.narrative.strip():
                raise PreconditionError("narrative must be non-empty")
            if project.style is None or project.style.is_empty():
                self._generate_style_locked(entry)
            style = project.style
            n = project.config.frame_count

            prompts, retries = self._chat_structured(
                project,
                promptkit.compose_frame_user_message(project.narrative, style),
                promptkit.build_frame_system_prompt(n),
                lambda raw: promptkit.parse_frame_reply(raw, n),
            )
            self._append(
                entry, PROMPTS_GENERATED, {"prompts": [p.to_dict() for p in prompts], "retry_count": retries}
            )

            seeds = [self._resubmit_seed(project) for _ in range(n)]
            self._render_frames(entry, list(range(n)), seeds, trigger="resubmit")
            return copy.deepcopy(project.frames)

    def _render_frames(self, entry: _ProjectEntry, indices: list[int], seeds: list[int], *, trigger: str) -> None:
        """Fan out renders for the given frames, join, then commit in index
        order: rendered frames get their image, failed ones an error note."""
        project = entry.project
        style = project.style if project.style is not None else StyleParameters()
        flat_prompts = {
            i: promptkit.render_image_prompt(project.frames[i].prompt, style, project.config) for i in indices
        }

        def render_one(i: int, seed: int):
            request = ImageRequest(
                prompt=flat_prompts[i],
                negative_prompt=project.config.negative_prompt,
                seed=seed,
                width=project.config.image_width,
                height=project.config.image_height,
            )
            return self.image_backend.txt2img(request)

        workers = max(1, min(len(indices), getattr(self.image_backend, "max_concurrency", 4)))
        results: dict[int, object] = {}
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(render_one, i, seed) for i, seed in zip(indices, seeds)}
            for i, future in futures.items():
                try:
                    results[i] = future.result()
                except BackendError as err:
                    results[i] = err

        kind = FRAME_REGENERATED if trigger == "regenerate" else FRAME_RENDERED
        for i in indices:
            result = results[i]
            if isinstance(result, BackendError):
                self._append(entry, FRAME_RENDER_FAILED, {"index": i, "error": str(result)})
            else:
                ref = self.image_store.put(result.image_bytes)
                self._append(
                    entry,
                    kind,
                    {
                        "index": i,
                        "seed": result.seed_used,
                        "image_ref": ref,
                        "image_prompt": flat_prompts[i],
                        "trigger": trigger,
                    },
                )

    def regenerate_frame(self, project: StoryboardProject, index: int) -> FrameRecord:
        """Re-render one frame with a policy-chosen seed; every other frame's
        record stays byte-identical. Backend failures leave the frame as it
        was and propagate."""
        entry = self._entry(project)
        with entry.lock:
            frame = self._frame_at(project, index)
            if frame.status == FrameStatus.EMPTY:
                raise PreconditionError(f"frame {index} has no prompt to render yet")
            style = project.style if project.style is not None else StyleParameters()
            flat = promptkit.render_image_prompt(frame.prompt, style, project.config)
            seed = self._rerender_seed(project, frame)
            result = self.image_backend.txt2img(
                ImageRequest(
                    prompt=flat,
                    negative_prompt=project.config.negative_prompt,
                    seed=seed,
                    width=project.config.image_width,
                    height=project.config.image_height,
                )
            )
            ref = self.image_store.put(result.image_bytes)
            self._append(
                entry,
                FRAME_REGENERATED,
                {
                    "index": index,
                    "seed": result.seed_used,
                    "image_ref": ref,
                    "image_prompt": flat,
                    "trigger": "regenerate",
                },
            )
            return copy.deepcopy(project.frames[index])

    def refresh_stale(self, project: StoryboardProject) -> list[FrameRecord]:
        """Re-render only the stale frames. Not what Resubmit does (that
        regenerates everything); this is the lighter catch-up the UI offers."""
        entry = self._entry(project)
        with entry.lock:
            indices = [f.index for f in project.frames if f.status == FrameStatus.STALE]
            seeds = [self._rerender_seed(project, project.frames[i]) for i in indices]
            self._render_frames(entry, indices, seeds, trigger="regenerate")
            return copy.deepcopy(project.frames)

    # -- frame edits -----------------------------------------------------------

    def _frame_at(self, project: StoryboardProject, index: int) -> FrameRecord:
        if not 0 <= index < len(project.frames):
            raise IndexOutOfRangeError(index, len(project.frames))
        return project.frames[index]

    def update_frame_from_parameters(
        self, project: StoryboardProject, index: int, frame_prompt: FramePrompt, render: bool = False
    ) -> FrameRecord:
        """Replace a frame's parameters; the prose view is re-derived. With
        ``render`` the new image is generated first and the edit commits
        atomically with it; without, the frame goes stale."""
        entry = self._entry(project)
        with entry.lock:
            self._frame_at(project, index)
            violations = frame_prompt_violations(frame_prompt)
            if violations:
                raise PreconditionError("; ".join(violations))
            prompt = copy.deepcopy(frame_prompt)
            prompt.natural_language = promptkit.frame_to_natural_language(prompt)
            self._commit_frame_edit(entry, index, prompt, FRAME_PROMPT_EDITED, "frame-prompt-edit", render)
            return copy.deepcopy(project.frames[index])

    def update_frame_from_natural_language(
        self, project: StoryboardProject, index: int, text: str, render: bool = False
    ) -> FrameRecord:
        """Re-parameterize a frame from prose via a single-frame extraction
        call; the user's text is kept verbatim as the natural-language view.
        Parse and backend failures leave the frame untouched."""
        entry = self._entry(project)
        with entry.lock:
            self._frame_at(project, index)
            if not text.strip():
                raise PreconditionError("frame description must be non-empty")
            style = project.style if project.style is not None else StyleParameters()
            prompts, _retries = self._chat_structured(
                project,
                promptkit.compose_frame_user_message(text, style),
                promptkit.build_frame_system_prompt(1),
                lambda raw: promptkit.parse_frame_reply(raw, 1),
            )
            prompt = prompts[0]
            prompt.natural_language = text
            self._commit_frame_edit(entry, index, prompt, FRAME_NL_EDITED, "frame-nl-edit", render, extra={"text": text})
            return copy.deepcopy(project.frames[index])

    def _commit_frame_edit(
        self,
        entry: _ProjectEntry,
        index: int,
        prompt: FramePrompt,
        kind: str,
        trigger: str,
        render: bool,
        extra: dict | None = None,
    ) -> None:
        """Commit an edit event, plus its render event when asked to render.

        The render happens before anything is committed so a backend
        failure leaves the frame exactly as it was.
        """
        project = entry.project
        payload = {"index": index, "prompt": prompt.to_dict(), "render": render, **(extra or {})}
        if not render:
            self._append(entry, kind, payload)
            return
        style = project.style if project.style is not None else StyleParameters()
        flat = promptkit.render_image_prompt(prompt, style, project.config)
        seed = self._rerender_seed(project, project.frames[index])
        result = self.image_backend.txt2img(
            ImageRequest(
                prompt=flat,
                negative_prompt=project.config.negative_prompt,
                seed=seed,
                width=project.config.image_width,
                height=project.config.image_height,
            )
        )
        ref = self.image_store.put(result.image_bytes)
        self._append(entry, kind, payload)
        self._append(
            entry,
            FRAME_RENDERED,
            {"index": index, "seed": result.seed_used, "image_ref": ref, "image_prompt": flat, "trigger": trigger},
        )

    # -- project-level edits ------------------------------------------------------

    def update_story(self, project: StoryboardProject, narrative: str) -> None:
        entry = self._entry(project)
        with entry.lock:
            if not narrative.strip():
                raise PreconditionError("narrative must be non-empty")
            self._append(entry, STORY_EDITED, {"narrative": narrative})

    def set_frame_count(self, project: StoryboardProject, n: int) -> None:
        entry = self._entry(project)
        with entry.lock:
            if n < 1:
                raise PreconditionError(f"frame count must be >= 1, got {n}")
            self._append(entry, FRAME_COUNT_CHANGED, {"frame_count": n})
