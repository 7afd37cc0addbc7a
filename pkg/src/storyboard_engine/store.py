"""Durable persistence and export.

One JSON file per project (full state plus event log), a shared
content-addressed image directory, and the storyboard export bundle:
contact sheet PNG, manifest JSON, self-contained HTML.

Writes are atomic (temp file then rename) and project files take an
advisory lock, so concurrent processes cannot interleave partial writes.
The image store is append-only and hash-named; concurrent writers of the
same bytes land on the same file.
"""

from __future__ import annotations

import base64
import hashlib
import html
import io
import json
import logging
import math
import os
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from filelock import FileLock
from PIL import Image, ImageDraw, ImageFont

from . import promptkit
from .core import FrameStatus, StoryboardProject, StyleParameters, validate_project
from .pipeline import PipelineEvent

__all__ = [
    "SCHEMA_VERSION",
    "ImageStore",
    "ProjectStore",
    "ExportBundle",
    "StoreError",
    "InvalidProjectError",
    "UnsupportedSchemaError",
    "CorruptProjectFileError",
    "NothingRenderedError",
    "export",
]

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1


class StoreError(Exception):
    pass


class InvalidProjectError(StoreError):
    def __init__(self, violations: list[str]):
        super().__init__("project fails validation: " + "; ".join(violations))
        self.violations = violations


class UnsupportedSchemaError(StoreError):
    def __init__(self, found: int):
        super().__init__(f"unsupported project schema version {found} (supported: {SCHEMA_VERSION})")
        self.found = found


class CorruptProjectFileError(StoreError):
    pass


class NothingRenderedError(StoreError):
    def __init__(self):
        super().__init__("project has no rendered frame to export")


class ImageStore:
    """Content-addressed PNG blobs on disk: <root>/<sha256 hex>.png."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path_for(self, ref: str) -> Path:
        return self.root / f"{ref}.png"

    def put(self, data: bytes) -> str:
        ref = hashlib.sha256(data).hexdigest()
        final = self.path_for(ref)
        if not final.exists():
            # The store directory can vanish under a long-lived process
            # (operator cleanup, tmpfs); recreate rather than fail the render.
            self.root.mkdir(parents=True, exist_ok=True)
            tmp = self.root / f".{ref}.{uuid.uuid4().hex}.tmp"
            tmp.write_bytes(data)
            os.replace(tmp, final)
        return ref

    def get(self, ref: str) -> bytes:
        path = self.path_for(ref)
        if not path.exists():
            raise KeyError(ref)
        return path.read_bytes()

    def __contains__(self, ref: str) -> bool:
        return self.path_for(ref).exists()


class ProjectStore:
    """Project files under <root>/projects/, images under <root>/images/."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.projects_dir = self.root / "projects"
        self.projects_dir.mkdir(parents=True, exist_ok=True)
        self.images = ImageStore(self.root / "images")

    def path_for(self, project_id: str) -> Path:
        return self.projects_dir / f"{project_id}.json"

    def _lock_for(self, path: Path) -> FileLock:
        return FileLock(str(path) + ".lock")

    def save(self, project: StoryboardProject, events: list[PipelineEvent] | tuple[PipelineEvent, ...] = ()) -> Path:
        violations = validate_project(project)
        if violations:
            raise InvalidProjectError(violations)
        document = {
            "schema_version": SCHEMA_VERSION,
            "project": project.to_dict(),
            "event_log": [event.to_dict() for event in events],
        }
        path = self.path_for(project.id)
        payload = json.dumps(document, indent=2, sort_keys=True)
        self.projects_dir.mkdir(parents=True, exist_ok=True)
        with self._lock_for(path):
            tmp = path.with_suffix(f".{uuid.uuid4().hex}.tmp")
            tmp.write_text(payload, encoding="utf-8")
            os.replace(tmp, path)
        return path

    def load(self, location: str | Path) -> tuple[StoryboardProject, list[PipelineEvent]]:
        """Read a project file by path or by project id.

        Frames whose image blob has gone missing are downgraded to stale
        with a warning rather than failing the load.
        """
        path = Path(location)
        if not path.exists():
            candidate = self.path_for(str(location))
            if not candidate.exists():
                raise FileNotFoundError(f"no project file at {location!r}")
            path = candidate
        with self._lock_for(path):
            text = path.read_text(encoding="utf-8")
        try:
            document = json.loads(text)
        except ValueError as err:
            raise CorruptProjectFileError(f"{path} is not valid JSON: {err}") from err
        if not isinstance(document, dict) or "schema_version" not in document:
            raise CorruptProjectFileError(f"{path} has no schema_version")
        if document["schema_version"] != SCHEMA_VERSION:
            raise UnsupportedSchemaError(document["schema_version"])
        try:
            project = StoryboardProject.from_dict(document["project"])
            events = [PipelineEvent.from_dict(entry) for entry in document.get("event_log", [])]
        except (KeyError, TypeError, ValueError) as err:
            raise CorruptProjectFileError(f"{path} does not decode as a project: {err}") from err

        for frame in project.frames:
            if frame.image_ref and frame.image_ref not in self.images:
                log.warning(
                    "project %s frame %d references missing image %s; marking stale",
                    project.id,
                    frame.index,
                    frame.image_ref,
                )
                frame.image_ref = None
                frame.status = FrameStatus.STALE
                frame.error = "image file missing from store"
        return project, events

    def list_ids(self) -> list[str]:
        return sorted(p.stem for p in self.projects_dir.glob("*.json"))


# ---------------------------------------------------------------------------
# Export

MARGIN = 16
GUTTER = 16
CAPTION_HEIGHT = 48
PLACEHOLDER_COLOR = (226, 226, 226)
SHEET_BACKGROUND = (255, 255, 255)
INK = (20, 20, 20)


@dataclass
class ExportBundle:
    out_dir: Path
    manifest: dict
    contact_sheet_path: Path | None = None
    manifest_path: Path | None = None
    html_path: Path | None = None
    frame_image_paths: list[Path] = field(default_factory=list)


def export(
    project: StoryboardProject,
    images: ImageStore,
    out_dir: str | Path,
    formats: set[str] = frozenset({"png", "html", "json"}),
    *,
    grid_width: int = 3,
) -> ExportBundle:
    """Produce the requested export formats for a project.

    png: contact sheet plus per-frame copies; json: the manifest; html: a
    single self-contained page. Captions come from each frame's
    natural-language view. Read-only: the project is not touched.
    """
    unknown = set(formats) - {"png", "html", "json"}
    if unknown:
        raise ValueError(f"unknown export formats: {sorted(unknown)}")
    if not any(frame.status == FrameStatus.RENDERED for frame in project.frames):
        raise NothingRenderedError()

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(project)
    bundle = ExportBundle(out_dir=out_dir, manifest=manifest)

    if "json" in formats:
        bundle.manifest_path = out_dir / "manifest.json"
        bundle.manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")

    if "png" in formats:
        sheet = render_contact_sheet(project, images, grid_width=grid_width)
        bundle.contact_sheet_path = out_dir / "contact_sheet.png"
        sheet.save(bundle.contact_sheet_path, format="PNG")
        frames_dir = out_dir / "frames"
        frames_dir.mkdir(exist_ok=True)
        for frame in project.frames:
            if frame.image_ref:
                path = frames_dir / f"frame_{frame.index + 1:02d}.png"
                path.write_bytes(images.get(frame.image_ref))
                bundle.frame_image_paths.append(path)

    if "html" in formats:
        bundle.html_path = out_dir / "storyboard.html"
        bundle.html_path.write_text(render_html(project, images), encoding="utf-8")

    return bundle


def build_manifest(project: StoryboardProject) -> dict:
    """The export manifest: narrative, style, per-frame prompts in both
    views, seeds, and image hashes. Deliberately free of timestamps so
    identical projects export identical bytes."""
    style = project.style if project.style is not None else StyleParameters()
    frames = []
    for frame in project.frames:
        entry = {
            "index": frame.index,
            "frame_number": frame.index + 1,
            "status": frame.status,
            "seed": frame.seed,
            "image_hash": frame.image_ref,
            "prompt": frame.prompt.to_dict(),
            "natural_language": frame.prompt.natural_language,
            "image_prompt": (
                promptkit.render_image_prompt(frame.prompt, style, project.config)
                if frame.prompt.general_description.strip()
                else None
            ),
            "error": frame.error,
        }
        frames.append(entry)
    return {
        "project_id": project.id,
        "narrative": project.narrative,
        "style": project.style.to_dict() if project.style is not None else None,
        "frame_count": project.config.frame_count,
        "frames": frames,
    }


def grid_geometry(project: StoryboardProject, grid_width: int = 3) -> dict:
    """Contact-sheet layout numbers, exposed so tests can check pixel math."""
    n = len(project.frames)
    columns = max(1, min(grid_width, n))
    rows = math.ceil(n / columns)
    cell_width = project.config.image_width
    cell_height = project.config.image_height + CAPTION_HEIGHT
    return {
        "columns": columns,
        "rows": rows,
        "cell_width": cell_width,
        "cell_height": cell_height,
        "sheet_width": 2 * MARGIN + columns * cell_width + (columns - 1) * GUTTER,
        "sheet_height": 2 * MARGIN + rows * cell_height + (rows - 1) * GUTTER,
    }


def cell_origin(geometry: dict, index: int) -> tuple[int, int]:
    row, column = divmod(index, geometry["columns"])
    x = MARGIN + column * (geometry["cell_width"] + GUTTER)
    y = MARGIN + row * (geometry["cell_height"] + GUTTER)
    return x, y


def render_contact_sheet(project: StoryboardProject, images: ImageStore, *, grid_width: int = 3) -> Image.Image:
    """Frames left-to-right, top-to-bottom with 1-based numbers and captions."""
    geometry = grid_geometry(project, grid_width)
    sheet = Image.new("RGB", (geometry["sheet_width"], geometry["sheet_height"]), SHEET_BACKGROUND)
    draw = ImageDraw.Draw(sheet)
    font = ImageFont.load_default(size=14)
    image_height = project.config.image_height

    for frame in project.frames:
        x, y = cell_origin(geometry, frame.index)
        if frame.image_ref:
            with Image.open(io.BytesIO(images.get(frame.image_ref))) as img:
                sheet.paste(img.convert("RGB"), (x, y))
        else:
            draw.rectangle(
                (x, y, x + geometry["cell_width"] - 1, y + image_height - 1), fill=PLACEHOLDER_COLOR
            )
            draw.text((x + 8, y + 8), "not rendered", fill=INK, font=font)
        caption = f"{frame.index + 1}. {frame.prompt.natural_language}"
        for line_number, line in enumerate(_caption_lines(caption, geometry["cell_width"])):
            draw.text((x + 4, y + image_height + 6 + line_number * 18), line, fill=INK, font=font)
    return sheet


def _caption_lines(caption: str, cell_width: int, max_lines: int = 2) -> list[str]:
    # The default bitmap font runs about 7px per character at size 14.
    per_line = max(8, (cell_width - 8) // 7)
    lines = []
    text = " ".join(caption.split())
    for _ in range(max_lines):
        if not text:
            break
        lines.append(text[:per_line])
        text = text[per_line:]
    if text and lines:
        lines[-1] = lines[-1][: per_line - 1] + "…"
    return lines


_HTML_STYLE = """
body { font-family: sans-serif; margin: 2rem; color: #222; }
.narrative { max-width: 60rem; white-space: pre-wrap; }
table.style { border-collapse: collapse; margin: 1rem 0; }
table.style td, table.style th { border: 1px solid #ccc; padding: 0.3rem 0.6rem; text-align: left; }
.grid { display: grid; grid-template-columns: repeat(3, minmax(0, 1fr)); gap: 1rem; max-width: 80rem; }
figure { margin: 0; }
figure img, .placeholder { width: 100%; display: block; }
.placeholder { background: #e2e2e2; aspect-ratio: 1; display: flex; align-items: center; justify-content: center; color: #666; }
figcaption { font-size: 0.9rem; padding-top: 0.3rem; }
"""


def render_html(project: StoryboardProject, images: ImageStore) -> str:
    """One self-contained page: narrative, style table, captioned frame grid."""
    parts = [
        "<!DOCTYPE html>",
        '<html><head><meta charset="utf-8">',
        f"<title>Storyboard {html.escape(project.id)}</title>",
        f"<style>{_HTML_STYLE}</style>",
        "</head><body>",
        "<h1>Storyboard</h1>",
        f'<p class="narrative">{html.escape(project.narrative)}</p>',
    ]
    if project.style is not None:
        rows = "".join(
            f"<tr><th>{html.escape(label)}</th><td>{html.escape(value)}</td></tr>"
            for label, value in project.style.as_pairs()
        )
        parts.append(f'<table class="style"><tbody>{rows}</tbody></table>')
    parts.append('<div class="grid">')
    for frame in project.frames:
        caption = html.escape(f"{frame.index + 1}. {frame.prompt.natural_language}")
        if frame.image_ref:
            encoded = base64.b64encode(images.get(frame.image_ref)).decode("ascii")
            parts.append(
                f'<figure><img alt="frame {frame.index + 1}" src="data:image/png;base64,{encoded}">'
                f"<figcaption>{caption}</figcaption></figure>"
            )
        else:
            parts.append(
                f'<figure><div class="placeholder">not rendered</div>'
                f"<figcaption>{caption}</figcaption></figure>"
            )
    parts.append("</div></body></html>")
    return "\n".join(parts)
