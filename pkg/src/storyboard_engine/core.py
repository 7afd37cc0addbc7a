"""Domain types for storyboard projects and their invariants.

Pure values only: no I/O and no model calls live here. Everything is a
plain dataclass that copies cleanly, compares field-for-field, and
round-trips through ``to_dict``/``from_dict``.
"""

from __future__ import annotations

import time
import uuid
from dataclasses import dataclass, field, replace

__all__ = [
    "STYLE_FIELDS",
    "FRAME_SLOTS",
    "FrameStatus",
    "SeedPolicy",
    "StyleParameters",
    "FramePrompt",
    "GenerationConfig",
    "LineageEntry",
    "FrameRecord",
    "StoryboardProject",
    "new_project",
    "validate_project",
    "frame_prompt_violations",
    "resize_frames",
]

# Canonical (label, attribute) pairs for the storyboard-level style slots.
# Order is part of the contract: serialization and UI listings preserve it.
STYLE_FIELDS: tuple[tuple[str, str], ...] = (
    ("Age", "age"),
    ("Gender", "gender"),
    ("Hair", "hair"),
    ("Clothing", "clothing"),
    ("Scene", "scene"),
    ("Location", "location"),
    ("Color", "color"),
    ("Art type", "art_type"),
    ("Lens and Shot", "lens_and_shot"),
)

# Canonical (label, attribute) pairs for the per-frame prompt slots.
FRAME_SLOTS: tuple[tuple[str, str], ...] = (
    ("General description", "general_description"),
    ("Object", "object"),
    ("Person", "person"),
    ("Action", "action"),
    ("Emotion", "emotion"),
    ("Background", "background"),
    ("Style", "style"),
    ("Shot", "shot"),
)


class FrameStatus:
    """Allowed frame lifecycle states (plain strings, JSON-friendly)."""

    EMPTY = "empty"
    PROMPT_READY = "prompt-ready"
    RENDERED = "rendered"
    STALE = "stale"

    ALL = (EMPTY, PROMPT_READY, RENDERED, STALE)


LINEAGE_TRIGGERS = ("resubmit", "frame-prompt-edit", "frame-nl-edit", "regenerate")


@dataclass(frozen=True)
class SeedPolicy:
    """How image seeds are chosen.

    kind:
      - "fixed": every render uses ``seed``.
      - "random-per-frame": each frame draws one seed at resubmit and
        keeps it across regenerations.
      - "random-per-regeneration": every render draws a fresh seed.
    """

    kind: str = "random-per-regeneration"
    seed: int = 0

    KINDS = ("fixed", "random-per-frame", "random-per-regeneration")

    @classmethod
    def fixed(cls, seed: int) -> "SeedPolicy":
        return cls(kind="fixed", seed=seed)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "seed": self.seed}

    @classmethod
    def from_dict(cls, data: dict) -> "SeedPolicy":
        return cls(kind=data["kind"], seed=data["seed"])


@dataclass
class StyleParameters:
    """The nine storyboard-level style descriptors.

    All free text; empty string means "not set" so the nine-slot shape is
    always visible to editors.
    """

    age: str = ""
    gender: str = ""
    hair: str = ""
    clothing: str = ""
    scene: str = ""
    location: str = ""
    color: str = ""
    art_type: str = ""
    lens_and_shot: str = ""

    def as_pairs(self) -> list[tuple[str, str]]:
        """(label, value) pairs in canonical order."""
        return [(label, getattr(self, attr)) for label, attr in STYLE_FIELDS]

    def serialize(self) -> str:
        """Canonical "Name:{value}" form, all nine slots, comma-separated.

        Lossless back through the parser as long as no value contains "}".
        """
        return ", ".join(f"{label}:{{{value}}}" for label, value in self.as_pairs())

    def is_empty(self) -> bool:
        return all(not value for _, value in self.as_pairs())

    def to_dict(self) -> dict:
        return {attr: getattr(self, attr) for _, attr in STYLE_FIELDS}

    @classmethod
    def from_dict(cls, data: dict) -> "StyleParameters":
        return cls(**{attr: data.get(attr, "") for _, attr in STYLE_FIELDS})


@dataclass
class FramePrompt:
    """One frame's parameterized prompt plus its prose counterpart.

    ``general_description`` is required for anything that will be
    rendered; the remaining seven slots are optional (empty string when
    unused). ``natural_language`` is the prose view and is kept in sync
    by the pipeline, never by this type.
    """

    general_description: str = ""
    object: str = ""
    person: str = ""
    action: str = ""
    emotion: str = ""
    background: str = ""
    style: str = ""
    shot: str = ""
    natural_language: str = ""

    def as_pairs(self) -> list[tuple[str, str]]:
        """(label, value) pairs for the eight slots in canonical order."""
        return [(label, getattr(self, attr)) for label, attr in FRAME_SLOTS]

    def populated_pairs(self) -> list[tuple[str, str]]:
        return [(label, value) for label, value in self.as_pairs() if value]

    def populated_count(self) -> int:
        return len(self.populated_pairs())

    def is_empty(self) -> bool:
        return self.populated_count() == 0

    def to_dict(self) -> dict:
        data = {attr: getattr(self, attr) for _, attr in FRAME_SLOTS}
        data["natural_language"] = self.natural_language
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "FramePrompt":
        kwargs = {attr: data.get(attr, "") for _, attr in FRAME_SLOTS}
        kwargs["natural_language"] = data.get("natural_language", "")
        return cls(**kwargs)


@dataclass
class GenerationConfig:
    """Knobs for one project's generation runs."""

    frame_count: int = 6
    image_width: int = 512
    image_height: int = 512
    seed_policy: SeedPolicy = field(default_factory=SeedPolicy)
    text_model_id: str = "gpt-4"
    image_model_id: str = ""
    negative_prompt: str = ""
    max_parse_retries: int = 2

    def to_dict(self) -> dict:
        return {
            "frame_count": self.frame_count,
            "image_width": self.image_width,
            "image_height": self.image_height,
            "seed_policy": self.seed_policy.to_dict(),
            "text_model_id": self.text_model_id,
            "image_model_id": self.image_model_id,
            "negative_prompt": self.negative_prompt,
            "max_parse_retries": self.max_parse_retries,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GenerationConfig":
        return cls(
            frame_count=data["frame_count"],
            image_width=data["image_width"],
            image_height=data["image_height"],
            seed_policy=SeedPolicy.from_dict(data["seed_policy"]),
            text_model_id=data.get("text_model_id", ""),
            image_model_id=data.get("image_model_id", ""),
            negative_prompt=data.get("negative_prompt", ""),
            max_parse_retries=data.get("max_parse_retries", 2),
        )


@dataclass
class LineageEntry:
    """One render in a frame's history. Appended, never rewritten."""

    timestamp: float
    trigger: str
    image_ref: str

    def to_dict(self) -> dict:
        return {"timestamp": self.timestamp, "trigger": self.trigger, "image_ref": self.image_ref}

    @classmethod
    def from_dict(cls, data: dict) -> "LineageEntry":
        return cls(timestamp=data["timestamp"], trigger=data["trigger"], image_ref=data["image_ref"])


@dataclass
class FrameRecord:
    """A frame's prompt, seed, image reference, status, and history.

    ``image_ref`` is a content-addressed identifier into the image store
    (None while nothing is rendered). ``error`` carries the last
    per-frame failure note; empty when the frame is healthy.
    """

    index: int
    prompt: FramePrompt = field(default_factory=FramePrompt)
    seed: int = -1
    image_ref: str | None = None
    status: str = FrameStatus.EMPTY
    lineage: list[LineageEntry] = field(default_factory=list)
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prompt": self.prompt.to_dict(),
            "seed": self.seed,
            "image_ref": self.image_ref,
            "status": self.status,
            "lineage": [entry.to_dict() for entry in self.lineage],
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FrameRecord":
        return cls(
            index=data["index"],
            prompt=FramePrompt.from_dict(data["prompt"]),
            seed=data["seed"],
            image_ref=data["image_ref"],
            status=data["status"],
            lineage=[LineageEntry.from_dict(entry) for entry in data.get("lineage", [])],
            error=data.get("error", ""),
        )


@dataclass
class StoryboardProject:
    """Aggregate state for one storyboard: narrative, style, frames, config."""

    id: str
    narrative: str
    style: StyleParameters | None
    frames: list[FrameRecord]
    config: GenerationConfig
    created_at: float
    updated_at: float

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "narrative": self.narrative,
            "style": self.style.to_dict() if self.style is not None else None,
            "frames": [frame.to_dict() for frame in self.frames],
            "config": self.config.to_dict(),
            "created_at": self.created_at,
            "updated_at": self.updated_at,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StoryboardProject":
        style = data["style"]
        return cls(
            id=data["id"],
            narrative=data["narrative"],
            style=StyleParameters.from_dict(style) if style is not None else None,
            frames=[FrameRecord.from_dict(frame) for frame in data["frames"]],
            config=GenerationConfig.from_dict(data["config"]),
            created_at=data["created_at"],
            updated_at=data["updated_at"],
        )


def new_project(
    narrative: str,
    config: GenerationConfig | None = None,
    *,
    project_id: str | None = None,
    clock=time.time,
) -> StoryboardProject:
    """Create a fresh project with one empty frame record per requested frame."""
    config = config if config is not None else GenerationConfig()
    now = clock()
    return StoryboardProject(
        id=project_id if project_id is not None else uuid.uuid4().hex,
        narrative=narrative,
        style=None,
        frames=[FrameRecord(index=i) for i in range(config.frame_count)],
        config=config,
        created_at=now,
        updated_at=now,
    )


def frame_prompt_violations(prompt: FramePrompt, *, ready: bool = True) -> list[str]:
    """Invariant check for one frame prompt.

    ``ready`` applies the ready-to-render rules (non-empty general
    description, 1..8 populated slots).
    """
    violations = []
    if ready and not prompt.general_description.strip():
        violations.append("prompt.general_description: required but empty")
    count = prompt.populated_count()
    if ready and not 1 <= count <= 8:
        violations.append(f"prompt slots: populated count {count} outside 1..8")
    return violations


def validate_project(project: StoryboardProject) -> list[str]:
    """Return every invariant violation in the project; [] means well-formed.

    Total function: never raises, each message names the field and rule
    it found broken.
    """
    violations: list[str] = []
    config = project.config

    if config.frame_count < 1:
        violations.append(f"config.frame_count: must be >= 1, got {config.frame_count}")
    for name, value in (("config.image_width", config.image_width), ("config.image_height", config.image_height)):
        if value <= 0 or value % 8 != 0:
            violations.append(f"{name}: must be a positive multiple of 8, got {value}")
    if config.seed_policy.kind not in SeedPolicy.KINDS:
        violations.append(f"config.seed_policy: unknown kind {config.seed_policy.kind!r}")
    if config.max_parse_retries < 0:
        violations.append(f"config.max_parse_retries: must be >= 0, got {config.max_parse_retries}")

    if len(project.frames) != config.frame_count:
        violations.append(
            f"frames.length: {len(project.frames)} does not match config.frame_count {config.frame_count}"
        )

    for position, frame in enumerate(project.frames):
        tag = f"frames[{position}]"
        if frame.index != position:
            violations.append(f"{tag}.index: {frame.index} does not match position {position}")
        if frame.status not in FrameStatus.ALL:
            violations.append(f"{tag}.status: unknown status {frame.status!r}")
            continue
        if frame.status == FrameStatus.RENDERED and not frame.image_ref:
            violations.append(f"{tag} status/image_ref: rendered frame has no image_ref")
        if frame.status in (FrameStatus.EMPTY, FrameStatus.PROMPT_READY) and frame.image_ref:
            violations.append(f"{tag} status/image_ref: {frame.status} frame must have no image_ref")
        if frame.status != FrameStatus.EMPTY:
            for item in frame_prompt_violations(frame.prompt):
                violations.append(f"{tag}.{item}")
        if project.style is None and frame.status != FrameStatus.EMPTY:
            violations.append(f"{tag}.status: project has no style but frame is {frame.status}")
        previous = None
        for entry in frame.lineage:
            if previous is not None and entry.timestamp < previous:
                violations.append(f"{tag}.lineage: timestamps not in order")
                break
            previous = entry.timestamp

    return violations


def resize_frames(project: StoryboardProject, frame_count: int) -> None:
    """Resize the frame list in place: truncate from the end, or append empties.

    Existing records below the new count are preserved bit-for-bit, so
    resizing n -> m -> n keeps the first min(n, m) records intact.
    """
    if frame_count < 1:
        raise ValueError(f"frame_count must be >= 1, got {frame_count}")
    frames = project.frames
    if frame_count < len(frames):
        del frames[frame_count:]
    else:
        for i in range(len(frames), frame_count):
            frames.append(FrameRecord(index=i))
    project.config = replace(project.config, frame_count=frame_count)
