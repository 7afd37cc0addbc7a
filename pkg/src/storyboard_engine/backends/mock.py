"""Deterministic offline stand-ins for the chat and image endpoints.

Both mocks are pure functions of their inputs plus a fixed ``mock_seed``:
replies and image bytes are byte-identical across runs and platforms.
The chat mock builds its replies with the real serializers, so every
end-to-end test exercises the real parsers on grammar-valid text.
"""

from __future__ import annotations

import hashlib
import io
import random
import re
import time

from PIL import Image, ImageDraw, ImageFont

from .. import promptkit
from ..core import FramePrompt, StyleParameters
from .base import (
    ChatRequest,
    HealthStatus,
    ImageRequest,
    ImageResult,
    validate_image_request,
)

__all__ = ["MockChatBackend", "MockImageBackend"]

# The frame system prompt is the only one that names a prompt count.
_FRAME_REQUEST_RE = re.compile(r"generate (\d+) prompts")

_AGES = ("5-7", "8-10", "20-25", "30-40", "60-70")
_GENDERS = ("female", "male")
_HAIR = ("brown curl", "short black", "long blond", "red ponytail")
_CLOTHING = ("blue dress", "green hoodie", "white shirt", "yellow raincoat")
_SCENES = (
    "under the soft glow of a desk lamp",
    "in bright morning light",
    "amid bustling evening streets",
    "in a quiet dusk haze",
)
_LOCATIONS = (
    "Indoor, in a warm bedroom",
    "Outdoor, in a city park",
    "Indoor, in a tidy office",
    "Outdoor, on a rainy street",
)
_COLORS = ("warm tones", "cool tones", "pastel palette", "high-contrast palette")
_ART_TYPES = ("realistic", "watercolor", "flat illustration", "anime")
_SHOTS_STYLE = ("Medium Shot", "Close-up Shot", "Wide Shot", "Over-the-shoulder Shot")

_OBJECTS = ("a red kite", "a paper map", "a steaming mug", "a silver phone", "a worn backpack")
_PERSONS = (
    "a boy with a red hat and freckles",
    "a little girl with braided hair",
    "an older man in a gray coat",
    "a young woman with glasses",
)
_ACTIONS = (
    "playing fetch with a dog",
    "reading under a tree",
    "sketching on a notepad",
    "waving at a friend",
    "walking briskly",
)
_EMOTIONS = ("joyful", "curious", "focused", "weary", "relieved")
_BACKGROUNDS = (
    "outdoor, a sunny park with a lake",
    "indoor, a cluttered study",
    "a rainy city sidewalk",
    "a quiet library corner",
)
_FRAME_STYLES = ("storybook illustration", "pencil sketch")
_FRAME_SHOTS = ("close-up", "wide shot", "medium shot", "bird's-eye view")


def _rng_for(*parts: str, mock_seed: int) -> random.Random:
    # sha256 rather than hash(): stable across processes and platforms.
    digest = hashlib.sha256("\x1f".join([str(mock_seed), *parts]).encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _clean_value(text: str) -> str:
    """Make arbitrary text safe inside a {value}: no braces, no delimiter."""
    text = " ".join(text.split())
    text = text.replace("{", "(").replace("}", ")").replace("//", "/")
    return text[:200].strip()


class MockChatBackend:
    """Grammar-valid synthetic chat replies, seeded by the request content.

    A system prompt asking to "generate N prompts" gets N frame blocks in
    a code fence; anything else gets a single 9-slot style block. Adding
    followup turns (the regeneration nonce) changes the reply.
    """

    backend_id = "mock-chat"

    def __init__(self, mock_seed: int = 0):
        self.mock_seed = mock_seed

    def chat(self, request: ChatRequest) -> str:
        parts = (request.system_prompt, request.user_message, *request.followup_turns)
        rng = _rng_for(*parts, mock_seed=self.mock_seed)
        match = _FRAME_REQUEST_RE.search(request.system_prompt)
        if match:
            return self._frame_reply(request, int(match.group(1)), rng)
        return self._style_reply(request, rng)

    def _style_reply(self, request: ChatRequest, rng: random.Random) -> str:
        scene = rng.choice(_SCENES)
        if request.followup_turns:
            scene = f"{scene}, take {len(request.followup_turns)}"
        style = StyleParameters(
            age=rng.choice(_AGES),
            gender=rng.choice(_GENDERS),
            hair=rng.choice(_HAIR),
            clothing=rng.choice(_CLOTHING),
            scene=scene,
            location=rng.choice(_LOCATIONS),
            color=rng.choice(_COLORS),
            art_type=rng.choice(_ART_TYPES),
            lens_and_shot=rng.choice(_SHOTS_STYLE),
        )
        return f"Here is the style:\n\n{style.serialize()}"

    def _frame_reply(self, request: ChatRequest, n: int, rng: random.Random) -> str:
        narrative = _clean_value(request.user_message.split(promptkit.STORY_DELIMITER, 1)[0])
        blocks = []
        for index in range(n):
            prompt = FramePrompt(
                general_description=f"{narrative}, moment {index + 1} of {n}",
                object=rng.choice(_OBJECTS) if rng.random() < 0.5 else "",
                person=rng.choice(_PERSONS) if rng.random() < 0.7 else "",
                action=rng.choice(_ACTIONS) if rng.random() < 0.7 else "",
                emotion=rng.choice(_EMOTIONS) if rng.random() < 0.5 else "",
                background=rng.choice(_BACKGROUNDS) if rng.random() < 0.7 else "",
                style=rng.choice(_FRAME_STYLES) if rng.random() < 0.2 else "",
                shot=rng.choice(_FRAME_SHOTS) if rng.random() < 0.5 else "",
            )
            blocks.append(promptkit.serialize_frame_prompt(prompt))
        body = "\n\n".join(blocks)
        return f"```\n{body}\n```"

    def health_check(self) -> HealthStatus:
        return HealthStatus(HealthStatus.OK)


class MockImageBackend:
    """Deterministic PNGs: a solid color keyed on (prompt, seed) with the
    first 40 characters of the prompt drawn as a label."""

    backend_id = "mock-image"

    def __init__(self, max_concurrency: int = 4):
        self.max_concurrency = max_concurrency

    def txt2img(self, request: ImageRequest) -> ImageResult:
        started = time.monotonic()
        validate_image_request(request)
        seed = request.seed
        if seed == -1:
            seed = int.from_bytes(hashlib.sha256(request.prompt.encode("utf-8")).digest()[:4], "big")
        digest = hashlib.sha256(f"{request.prompt}\x1f{seed}".encode("utf-8")).digest()
        color = (digest[0], digest[1], digest[2])
        image = Image.new("RGB", (request.width, request.height), color)
        luminance = 0.299 * color[0] + 0.587 * color[1] + 0.114 * color[2]
        ink = (0, 0, 0) if luminance > 128 else (255, 255, 255)
        draw = ImageDraw.Draw(image)
        draw.text((8, 8), request.prompt[:40], fill=ink, font=ImageFont.load_default(size=14))
        buffer = io.BytesIO()
        image.save(buffer, format="PNG")
        latency = (time.monotonic() - started) * 1000.0
        return ImageResult(image_bytes=buffer.getvalue(), seed_used=seed, backend_latency=latency)

    def health_check(self) -> HealthStatus:
        return HealthStatus(HealthStatus.OK)
