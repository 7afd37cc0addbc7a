"""Side-by-side comparison of prompting modes across image backends.

For one narrative the harness derives a style and N frame prompts once,
then renders every (mode, backend) cell: natural-language mode sends each
frame's prose straight to the image endpoint, parameterized mode sends
the flattened slot prompt the pipeline would use. Each image gets at
most two generation attempts; failures are recorded per image and the
run continues. Output is a manifest (prompts, seeds, latencies,
attempts) and one contact sheet with the cells side by side.
"""

from __future__ import annotations

import io
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from PIL import Image, ImageDraw, ImageFont

from . import promptkit
from .backends.base import BackendError, ChatBackend, ImageBackend, ImageRequest
from .core import FramePrompt, GenerationConfig, StyleParameters
from .pipeline import ImageStoreLike, MemoryImageStore, chat_structured

__all__ = ["MODES", "MAX_ATTEMPTS", "CellImage", "CellResult", "ComparisonReport", "run_comparison_harness"]

log = logging.getLogger(__name__)

MODES = ("natural-language", "parameterized")
MAX_ATTEMPTS = 2


@dataclass
class CellImage:
    frame_number: int  # 1-based
    prompt: str
    seed: int
    attempts: int
    image_ref: str | None = None
    latency_ms: float | None = None
    error: str = ""

    def to_dict(self) -> dict:
        return {
            "frame_number": self.frame_number,
            "prompt": self.prompt,
            "seed": self.seed,
            "attempts": self.attempts,
            "image_ref": self.image_ref,
            "latency_ms": self.latency_ms,
            "error": self.error,
        }


@dataclass
class CellResult:
    mode: str
    backend_id: str
    images: list[CellImage] = field(default_factory=list)

    @property
    def label(self) -> str:
        return f"{self.mode} @ {self.backend_id}"

    def failed_count(self) -> int:
        return sum(1 for image in self.images if image.image_ref is None)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "backend_id": self.backend_id,
            "images": [image.to_dict() for image in self.images],
        }


@dataclass
class ComparisonReport:
    narrative: str
    frame_count: int
    style: StyleParameters
    frame_prompts: list[FramePrompt]
    cells: list[CellResult]
    out_dir: Path | None = None
    manifest_path: Path | None = None
    sheet_path: Path | None = None

    def manifest(self) -> dict:
        return {
            "narrative": self.narrative,
            "frame_count": self.frame_count,
            "max_attempts_per_image": MAX_ATTEMPTS,
            "style": self.style.to_dict(),
            "frame_prompts": [prompt.to_dict() for prompt in self.frame_prompts],
            "cells": [cell.to_dict() for cell in self.cells],
        }


def run_comparison_harness(
    narrative: str,
    n: int,
    modes: list[str] | tuple[str, ...],
    backends: list[ImageBackend],
    *,
    chat_backend: ChatBackend,
    image_store: ImageStoreLike | None = None,
    out_dir: str | Path | None = None,
    config: GenerationConfig | None = None,
    rng: random.Random | None = None,
) -> ComparisonReport:
    """Run every (mode, backend) cell and, when out_dir is given, write the
    manifest JSON and the side-by-side sheet there."""
    if not narrative.strip():
        raise ValueError("narrative must be non-empty")
    if n < 1:
        raise ValueError(f"frame count must be >= 1, got {n}")
    if not backends:
        raise ValueError("at least one image backend is required")
    bad_modes = [mode for mode in modes if mode not in MODES]
    if bad_modes or not modes:
        raise ValueError(f"modes must be a non-empty subset of {MODES}, got {list(modes)}")

    config = config if config is not None else GenerationConfig(frame_count=n)
    image_store = image_store if image_store is not None else MemoryImageStore()
    rng = rng if rng is not None else random.Random()

    style, _ = chat_structured(
        chat_backend,
        promptkit.build_style_system_prompt(),
        narrative,
        promptkit.parse_style_reply,
        model_id=config.text_model_id,
        max_retries=config.max_parse_retries,
    )
    prompts, _ = chat_structured(
        chat_backend,
        promptkit.build_frame_system_prompt(n),
        promptkit.compose_frame_user_message(narrative, style),
        lambda raw: promptkit.parse_frame_reply(raw, n),
        model_id=config.text_model_id,
        max_retries=config.max_parse_retries,
    )

    # One seed per frame, shared by every cell, so cells differ only in
    # their prompt text and backend.
    policy = config.seed_policy
    seeds = [policy.seed if policy.kind == "fixed" else rng.getrandbits(31) for _ in range(n)]

    cells = []
    for backend in backends:
        for mode in modes:
            cell = CellResult(mode=mode, backend_id=backend.backend_id)
            for index, prompt in enumerate(prompts):
                if mode == "natural-language":
                    text = prompt.natural_language or prompt.general_description
                else:
                    text = promptkit.render_image_prompt(prompt, style, config)
                cell.images.append(
                    _render_with_attempts(backend, image_store, text, seeds[index], index, config)
                )
            if cell.failed_count():
                log.warning("cell %s finished with %d failed images", cell.label, cell.failed_count())
            cells.append(cell)

    report = ComparisonReport(
        narrative=narrative, frame_count=n, style=style, frame_prompts=prompts, cells=cells
    )
    if out_dir is not None:
        _write_outputs(report, image_store, Path(out_dir))
    return report


def _render_with_attempts(
    backend: ImageBackend,
    image_store: ImageStoreLike,
    prompt: str,
    seed: int,
    index: int,
    config: GenerationConfig,
) -> CellImage:
    record = CellImage(frame_number=index + 1, prompt=prompt, seed=seed, attempts=0)
    request = ImageRequest(
        prompt=prompt,
        negative_prompt=config.negative_prompt,
        seed=seed,
        width=config.image_width,
        height=config.image_height,
    )
    for _ in range(MAX_ATTEMPTS):
        record.attempts += 1
        try:
            result = backend.txt2img(request)
        except BackendError as err:
            record.error = str(err)
            if not err.retryable:
                break
            continue
        record.image_ref = image_store.put(result.image_bytes)
        record.latency_ms = result.backend_latency
        record.error = ""
        break
    return record


def _write_outputs(report: ComparisonReport, image_store: ImageStoreLike, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    report.out_dir = out_dir
    report.manifest_path = out_dir / "comparison_manifest.json"
    report.manifest_path.write_text(
        json.dumps(report.manifest(), indent=2, sort_keys=True), encoding="utf-8"
    )
    for cell in report.cells:
        cell_dir = out_dir / "cells" / f"{cell.mode}-{cell.backend_id}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        for image in cell.images:
            if image.image_ref:
                path = cell_dir / f"frame_{image.frame_number:02d}.png"
                path.write_bytes(image_store.get(image.image_ref))
    report.sheet_path = out_dir / "comparison_sheet.png"
    _render_sheet(report, image_store).save(report.sheet_path, format="PNG")


_MARGIN = 16
_GUTTER = 16
_HEADER_HEIGHT = 28


def _render_sheet(report: ComparisonReport, image_store: ImageStoreLike) -> Image.Image:
    """Cells as columns, frames as rows, one header line per column."""
    cell_count = len(report.cells)
    widths = []
    heights = []
    for cell in report.cells:
        # All harness requests share the config dimensions; read one image
        # to stay honest about what the backend actually returned.
        width = height = None
        for image in cell.images:
            if image.image_ref:
                with Image.open(io.BytesIO(image_store.get(image.image_ref))) as img:
                    width, height = img.size
                break
        widths.append(width or 512)
        heights.append(height or 512)
    row_height = max(heights) if heights else 512
    sheet_width = 2 * _MARGIN + sum(widths) + (cell_count - 1) * _GUTTER
    sheet_height = 2 * _MARGIN + _HEADER_HEIGHT + report.frame_count * (row_height + _GUTTER) - _GUTTER
    sheet = Image.new("RGB", (max(sheet_width, 1), max(sheet_height, 1)), (255, 255, 255))
    draw = ImageDraw.Draw(sheet)
    font = ImageFont.load_default(size=14)

    x = _MARGIN
    for column, cell in enumerate(report.cells):
        draw.text((x, _MARGIN), cell.label[:60], fill=(20, 20, 20), font=font)
        y = _MARGIN + _HEADER_HEIGHT
        for image in cell.images:
            if image.image_ref:
                with Image.open(io.BytesIO(image_store.get(image.image_ref))) as img:
                    sheet.paste(img.convert("RGB"), (x, y))
            else:
                draw.rectangle((x, y, x + widths[column] - 1, y + row_height - 1), fill=(226, 226, 226))
                draw.text((x + 8, y + 8), f"failed: {image.error[:40]}", fill=(20, 20, 20), font=font)
            y += row_height + _GUTTER
        x += widths[column] + _GUTTER
    return sheet


def grid_shape(report: ComparisonReport) -> tuple[int, int]:
    """(cells, images per cell) for quick count checks."""
    return len(report.cells), report.frame_count


def total_attempts(report: ComparisonReport) -> int:
    return sum(image.attempts for cell in report.cells for image in cell.images)


def max_attempts_used(report: ComparisonReport) -> int:
    return max((image.attempts for cell in report.cells for image in cell.images), default=0)
