"""System-prompt templating and structured-reply parsing.

This module owns the "Name:{value}" grammar: it builds the two chat
system prompts from versioned template files, parses model replies into
:class:`~storyboard_engine.core.StyleParameters` and
:class:`~storyboard_engine.core.FramePrompt` values, and flattens frame
prompts into the comma-phrase strings an image backend consumes.

Everything here is pure and reentrant. Replies are treated as hostile
input: the parsers tolerate surrounding prose, code fences, numbered
lists and reordered parameters, and raise only their declared error
types no matter what text comes in.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .core import FRAME_SLOTS, STYLE_FIELDS, FramePrompt, GenerationConfig, StyleParameters

__all__ = [
    "PLACEHOLDER",
    "PromptTemplate",
    "ParsedBlock",
    "ParseError",
    "NoBlockFoundError",
    "DuplicateParameterError",
    "BlockCountMismatchError",
    "MissingGeneralDescriptionError",
    "load_template",
    "build_style_system_prompt",
    "build_frame_system_prompt",
    "compose_frame_user_message",
    "parse_style_reply",
    "parse_frame_reply",
    "render_image_prompt",
    "frame_to_natural_language",
    "serialize_frame_prompt",
    "corrective_message",
]

log = logging.getLogger(__name__)

PLACEHOLDER = "PIC-NUM-NEEDED"

STORY_DELIMITER = "//"

_TEMPLATE_FILES = {
    "story-to-style": "story_to_style.txt",
    "story-to-prompt": "story_to_frames.txt",
}

# Canonical slot name -> attribute maps. "people" is accepted as an alias
# for "person" because the frame template's own parameter descriptions
# use both spellings and models follow either.
_STYLE_SLOT_MAP = {label.lower(): attr for label, attr in STYLE_FIELDS}
_FRAME_SLOT_MAP = {label.lower(): attr for label, attr in FRAME_SLOTS}
_FRAME_SLOT_MAP["people"] = "person"


class ParseError(ValueError):
    """Base for every reply-parsing failure."""


class NoBlockFoundError(ParseError):
    """The reply contained no Name:{value} pair at all."""


class DuplicateParameterError(ParseError):
    """A slot appeared twice in one block with conflicting values."""

    def __init__(self, name: str, first: str, second: str):
        super().__init__(f"parameter {name!r} appears twice with conflicting values ({first!r} vs {second!r})")
        self.name = name


class BlockCountMismatchError(ParseError):
    """The reply split into a different number of prompt blocks than requested."""

    def __init__(self, found: int, expected: int):
        super().__init__(f"expected {expected} prompt blocks, found {found}")
        self.found = found
        self.expected = expected


class MissingGeneralDescriptionError(ParseError):
    """A prompt block has no usable General description parameter."""

    def __init__(self, index: int):
        super().__init__(f"prompt block {index + 1} has no General description")
        self.index = index


@dataclass(frozen=True)
class PromptTemplate:
    """A loaded system-prompt template.

    ``template_id`` is "story-to-style" (no placeholder) or
    "story-to-prompt" (at least one PIC-NUM-NEEDED placeholder).
    """

    template_id: str
    body: str

    def render(self, n: int | None = None) -> str:
        if self.template_id == "story-to-style":
            return self.body
        if n is None or n < 1:
            raise ValueError(f"frame count must be >= 1, got {n}")
        return self.body.replace(PLACEHOLDER, str(n))


@lru_cache(maxsize=None)
def load_template(template_id: str) -> PromptTemplate:
    """Load a template resource file and check its placeholder invariant."""
    try:
        filename = _TEMPLATE_FILES[template_id]
    except KeyError:
        raise ValueError(f"unknown template id {template_id!r}") from None
    body = resources.files(__package__).joinpath("templates", filename).read_text(encoding="utf-8")
    body = "\n".join(line.rstrip() for line in body.split("\n")).strip("\n")
    count = body.count(PLACEHOLDER)
    if template_id == "story-to-style" and count != 0:
        raise ValueError("story-to-style template must not contain the frame-count placeholder")
    if template_id == "story-to-prompt" and count < 1:
        raise ValueError("story-to-prompt template must contain the frame-count placeholder")
    return PromptTemplate(template_id=template_id, body=body)


def build_style_system_prompt() -> str:
    """The style-identification system prompt, verbatim from its template."""
    return load_template("story-to-style").render()


def build_frame_system_prompt(n: int) -> str:
    """The frame-prompt system prompt with every placeholder replaced by ``n``."""
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"frame count must be an integer >= 1, got {n!r}")
    return load_template("story-to-prompt").render(n)


def compose_frame_user_message(narrative: str, style: StyleParameters) -> str:
    """Join the narrative and the serialized style with the "//" delimiter.

    The narrative passes through unescaped; there is no escaping rule for
    "//" inside values, which is a documented limitation of the grammar.
    """
    if not narrative.strip():
        raise ValueError("narrative must be non-empty")
    return f"{narrative}{STORY_DELIMITER}{style.serialize()}"


# ---------------------------------------------------------------------------
# Reply parsing


# A parameter pair: a short name (letters, digits, spaces, - or _) before a
# colon and a brace-wrapped value running to the first closing brace.
_PAIR_RE = re.compile(r"(?P<name>[A-Za-z][A-Za-z0-9_\- \t]{0,48}?)[ \t]*:[ \t]*\{(?P<value>[^}]*)\}")

_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.DOTALL)
_NUMBERED_RE = re.compile(r"(?m)^[ \t]*\d{1,3}[.)][ \t]+")
_BLANK_LINE_RE = re.compile(r"\n[ \t]*\n+")


@dataclass
class ParsedBlock:
    """One extracted run of parameter pairs and where it came from.

    ``pairs`` keeps the raw (name, value) order of appearance;
    ``source_span`` is the (start, end) character range in the original
    reply text covering the first through last pair.
    """

    pairs: list[tuple[str, str]]
    source_span: tuple[int, int]

    def canonical_items(self) -> list[tuple[str, str, str]]:
        """(canonical_name, raw_name, value) with duplicates collapsed.

        The first occurrence of a name wins; later occurrences are
        reported through ``conflicts()`` instead.
        """
        seen: dict[str, tuple[str, str]] = {}
        ordered = []
        for raw_name, value in self.pairs:
            canon = _canonical_name(raw_name)
            if canon in seen:
                continue
            seen[canon] = (raw_name, value)
            ordered.append((canon, raw_name, value))
        return ordered

    def conflicts(self) -> list[tuple[str, str, str]]:
        """(canonical_name, first_value, conflicting_value) duplicates."""
        first: dict[str, str] = {}
        out = []
        for raw_name, value in self.pairs:
            canon = _canonical_name(raw_name)
            if canon in first and first[canon] != value:
                out.append((canon, first[canon], value))
            first.setdefault(canon, value)
        return out


def _canonical_name(name: str) -> str:
    return " ".join(name.replace("_", " ").replace("-", " ").lower().split())


def _segment_candidates(raw: str) -> list[tuple[str, int]]:
    """Split a reply into candidate block texts with offsets into ``raw``.

    Order of strategies: fenced code cells first (the templates ask for a
    code cell), then numbered-list items, then blank-line groups. A final
    pass splits any candidate that still holds several "General
    description" pairs, which catches one-line-per-prompt replies.
    """
    if _FENCE_RE.search(raw):
        pieces = [(m.group(1), m.start(1)) for m in _FENCE_RE.finditer(raw)]
    else:
        pieces = [(raw, 0)]

    split_numbered = []
    for text, offset in pieces:
        markers = list(_NUMBERED_RE.finditer(text))
        if len(markers) >= 2:
            starts = [m.start() for m in markers]
            if starts[0] > 0:
                split_numbered.append((text[: starts[0]], offset))
            for i, start in enumerate(starts):
                end = starts[i + 1] if i + 1 < len(starts) else len(text)
                split_numbered.append((text[start:end], offset + start))
        else:
            split_numbered.append((text, offset))

    split_blank = []
    for text, offset in split_numbered:
        position = 0
        for m in _BLANK_LINE_RE.finditer(text):
            split_blank.append((text[position : m.start()], offset + position))
            position = m.end()
        split_blank.append((text[position:], offset + position))

    final = []
    for text, offset in split_blank:
        anchors = [
            m.start()
            for m in _PAIR_RE.finditer(text)
            if _canonical_name(m.group("name")) == "general description"
        ]
        if len(anchors) >= 2:
            if anchors[0] > 0:
                final.append((text[: anchors[0]], offset))
            for i, start in enumerate(anchors):
                end = anchors[i + 1] if i + 1 < len(anchors) else len(text)
                final.append((text[start:end], offset + start))
        else:
            final.append((text, offset))
    return final


def _parsed_blocks(raw: str) -> list[ParsedBlock]:
    """All pair-bearing blocks of a reply, in reading order."""
    blocks = []
    for text, offset in _segment_candidates(raw):
        matches = list(_PAIR_RE.finditer(text))
        if not matches:
            continue
        pairs = [(m.group("name").strip(), m.group("value").strip()) for m in matches]
        span = (offset + matches[0].start(), offset + matches[-1].end())
        blocks.append(ParsedBlock(pairs=pairs, source_span=span))
    return blocks


def parse_style_reply(raw: str) -> StyleParameters:
    """Extract the nine style slots from the first parameter block in a reply.

    Missing slots come back as empty strings; unknown parameter names are
    dropped with a warning. Raises :class:`NoBlockFoundError` when the
    reply holds no pairs at all and :class:`DuplicateParameterError` when
    one slot appears twice with conflicting values.
    """
    blocks = _parsed_blocks(raw)
    if not blocks:
        raise NoBlockFoundError("no Name:{value} pairs found in reply")
    block = next(
        (b for b in blocks if any(canon in _STYLE_SLOT_MAP for canon, _, _ in b.canonical_items())),
        blocks[0],
    )
    for canon, first, second in block.conflicts():
        if canon in _STYLE_SLOT_MAP:
            raise DuplicateParameterError(canon, first, second)

    values: dict[str, str] = {}
    for canon, raw_name, value in block.canonical_items():
        attr = _STYLE_SLOT_MAP.get(canon)
        if attr is None:
            log.warning("dropping unknown style parameter %r", raw_name)
            continue
        values[attr] = value
    return StyleParameters(**values)


def parse_frame_reply(raw: str, n: int) -> list[FramePrompt]:
    """Parse a reply into exactly ``n`` frame prompts.

    Blocks are found by code fence, numbered list or blank-line grouping;
    each block's known slots fill one :class:`FramePrompt` (canonical
    order, unknown names dropped with a warning, duplicate names keep the
    first value). ``natural_language`` starts out as the block's general
    description.
    """
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ValueError(f"frame count must be an integer >= 1, got {n!r}")
    blocks = _parsed_blocks(raw)
    if len(blocks) != n:
        raise BlockCountMismatchError(found=len(blocks), expected=n)

    prompts = []
    for index, block in enumerate(blocks):
        for canon, first, second in block.conflicts():
            log.warning("duplicate frame parameter %r in block %d, keeping first value", canon, index + 1)
        slots: dict[str, str] = {}
        for canon, raw_name, value in block.canonical_items():
            attr = _FRAME_SLOT_MAP.get(canon)
            if attr is None:
                log.warning("dropping unknown frame parameter %r in block %d", raw_name, index + 1)
                continue
            slots.setdefault(attr, value)
        if not slots.get("general_description", "").strip():
            raise MissingGeneralDescriptionError(index)
        prompt = FramePrompt(**slots)
        prompt.natural_language = prompt.general_description
        prompts.append(prompt)
    return prompts


# ---------------------------------------------------------------------------
# Rendering


def render_image_prompt(
    frame: FramePrompt,
    style: StyleParameters,
    config: GenerationConfig | None = None,
) -> str:
    """Flatten a frame prompt plus storyboard style into one image prompt.

    Populated frame slots come first in canonical order (general
    description leads, since it carries the core of the scene), then the
    style contribution: the character descriptors (age, gender, hair,
    clothing) only when the frame names no person of its own, and always
    art type, color, and lens/shot. Same inputs, same output.
    """
    del config  # reserved: flat prompts are currently backend-independent
    if not frame.general_description.strip():
        raise ValueError("general_description must be non-empty to render an image prompt")
    phrases = [value for _, value in frame.populated_pairs()]
    if not frame.person:
        phrases.extend(v for v in (style.age, style.gender, style.hair, style.clothing) if v)
    phrases.extend(v for v in (style.art_type, style.color, style.lens_and_shot) if v)
    return ", ".join(phrases)


def frame_to_natural_language(frame: FramePrompt) -> str:
    """Deterministic prose realization of a frame's parameters.

    One sentence grown from the general description: "featuring" the
    person, "who is" the action, "feeling" the emotion, "in" the
    background, with style and shot in a trailing parenthetical.
    """
    text = frame.general_description
    if frame.person:
        text += f", featuring {frame.person}"
    if frame.action:
        text += f", who is {frame.action}"
    if frame.emotion:
        text += f", feeling {frame.emotion}"
    if frame.background:
        text += f", in {frame.background}"
    tail = [v for v in (frame.style, frame.shot) if v]
    if tail:
        text += f" ({', '.join(tail)})"
    return text.lstrip(", ")


def serialize_frame_prompt(frame: FramePrompt) -> str:
    """Canonical "Name: {value}" line for a frame's populated slots.

    This is the exact shape the frame template's example uses, so parsing
    it back yields the same slots.
    """
    return ", ".join(f"{label}: {{{value}}}" for label, value in frame.populated_pairs())


def corrective_message(error: ParseError) -> str:
    """A follow-up user turn asking the model to fix one grammar violation."""
    style_names = ", ".join(label for label, _ in STYLE_FIELDS)
    if isinstance(error, BlockCountMismatchError):
        return (
            f"Your previous reply contained {error.found} prompts but exactly {error.expected} are "
            f"required. Reply again with exactly {error.expected} prompts, each one a comma-separated "
            "sequence of 'Name: {value}' pairs, with a blank line between prompts and no other text."
        )
    if isinstance(error, MissingGeneralDescriptionError):
        return (
            f"Prompt {error.index + 1} of your previous reply is missing its 'General description' "
            "parameter. Reply again with every prompt containing a non-empty "
            "'General description: {...}' pair."
        )
    if isinstance(error, DuplicateParameterError):
        return (
            f"Your previous reply repeated the parameter '{error.name}' with different values. Reply "
            "again with each parameter appearing at most once."
        )
    return (
        "Your previous reply did not follow the required format. Reply with comma-separated "
        "'Name:{value}' pairs using curly brackets around each value, for the parameters "
        f"{style_names}, and no surrounding explanation."
    )
