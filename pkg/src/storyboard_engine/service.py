"""HTTP API over the pipeline and store.

Every edit-loop operation is an endpoint; responses carry the full
project JSON so clients never have to guess at derived state. Errors
come back as a stable machine code plus a retryable flag. Generation
endpoints are synchronous by default; ``?async=1`` returns a polling
job id instead, for image backends too slow for one request cycle.
"""

from __future__ import annotations

import io
import logging
import tempfile
import threading
import time
import uuid
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Literal, Optional

from fastapi import FastAPI, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from . import promptkit
from .backends.base import (
    AuthError,
    BackendBusyError,
    BackendError,
    HealthStatus,
    InvalidParametersError,
    ModelRefusalError,
    TransportError,
)
from .config import Settings, load_settings, make_chat_backend, make_image_backend
from .core import FramePrompt, GenerationConfig, StoryboardProject, StyleParameters
from .pipeline import (
    IndexOutOfRangeError,
    ParseExhaustedError,
    Pipeline,
    PipelineError,
    PreconditionError,
    UnknownProjectError,
)
from .store import (
    CorruptProjectFileError,
    InvalidProjectError,
    NothingRenderedError,
    ProjectStore,
    StoreError,
    UnsupportedSchemaError,
    export,
)

__all__ = ["ApiError", "api_error_for", "create_app"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ApiError:
    """What a failure looks like on the wire."""

    http_status: int
    machine_code: str
    human_message: str
    retryable: bool

    def to_payload(self) -> dict:
        return {
            "machine_code": self.machine_code,
            "human_message": self.human_message,
            "retryable": self.retryable,
        }


# Most-specific first; api_error_for walks this in order.
_ERROR_MAP: tuple[tuple[type, int, str, bool], ...] = (
    (ParseExhaustedError, 502, "parse-exhausted", True),
    (IndexOutOfRangeError, 404, "frame-out-of-range", False),
    (UnknownProjectError, 404, "unknown-project", False),
    (PreconditionError, 422, "precondition-failed", False),
    (PipelineError, 500, "pipeline-error", False),
    (promptkit.ParseError, 502, "unparseable-reply", True),
    (AuthError, 502, "backend-auth", False),
    (BackendBusyError, 503, "backend-busy", True),
    (ModelRefusalError, 502, "model-refusal", False),
    (InvalidParametersError, 422, "invalid-parameters", False),
    (TransportError, 502, "backend-transport", True),
    (BackendError, 502, "backend-error", False),
    (NothingRenderedError, 409, "nothing-rendered", False),
    (InvalidProjectError, 422, "invalid-project", False),
    (UnsupportedSchemaError, 409, "unsupported-schema", False),
    (CorruptProjectFileError, 500, "corrupt-project-file", False),
    (StoreError, 500, "store-error", False),
)

_HANDLED_BASES = (PipelineError, BackendError, StoreError, promptkit.ParseError)


def api_error_for(exc: Exception) -> ApiError:
    """Total mapping from engine exceptions to wire errors."""
    for exc_type, status, code, retryable in _ERROR_MAP:
        if isinstance(exc, exc_type):
            return ApiError(status, code, str(exc), retryable)
    return ApiError(500, "internal-error", str(exc), False)


class CreateProjectBody(BaseModel):
    narrative: str
    frame_count: Optional[int] = Field(default=None, ge=1)


class StyleBody(BaseModel):
    age: str = ""
    gender: str = ""
    hair: str = ""
    clothing: str = ""
    scene: str = ""
    location: str = ""
    color: str = ""
    art_type: str = ""
    lens_and_shot: str = ""


class PromptEditBody(BaseModel):
    view: Literal["parameterized", "natural"]
    body: Any
    render: bool = False


class StoryBody(BaseModel):
    narrative: str


class FrameCountBody(BaseModel):
    frame_count: int = Field(ge=1)


class _Jobs:
    """Tiny in-process registry for async resubmit jobs."""

    def __init__(self):
        self._jobs: dict[str, dict] = {}
        self._lock = threading.Lock()

    def start(self) -> str:
        job_id = uuid.uuid4().hex
        with self._lock:
            self._jobs[job_id] = {"job_id": job_id, "status": "running", "result": None, "error": None}
        return job_id

    def finish(self, job_id: str, result: dict) -> None:
        with self._lock:
            self._jobs[job_id].update(status="done", result=result)

    def fail(self, job_id: str, error: ApiError) -> None:
        with self._lock:
            self._jobs[job_id].update(status="failed", error=error.to_payload())

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            job = self._jobs.get(job_id)
            return dict(job) if job else None


def create_app(
    settings: Settings | None = None,
    *,
    pipeline: Pipeline | None = None,
    store: ProjectStore | None = None,
    clock=time.time,
) -> FastAPI:
    settings = settings if settings is not None else load_settings()
    store = store if store is not None else ProjectStore(settings.data_dir)
    if pipeline is None:
        pipeline = Pipeline(
            make_chat_backend(settings),
            make_image_backend(settings),
            store.images,
            clock=clock,
        )

    app = FastAPI(title="storyboard-engine", docs_url=None, redoc_url=None)
    app.state.settings = settings
    app.state.pipeline = pipeline
    app.state.store = store
    app.state.jobs = _Jobs()

    def handle_known_error(request: Request, exc: Exception) -> JSONResponse:
        error = api_error_for(exc)
        if error.http_status >= 500:
            log.warning("request %s failed: %s", request.url.path, exc)
        return JSONResponse(status_code=error.http_status, content={"error": error.to_payload()})

    for base in _HANDLED_BASES:
        app.add_exception_handler(base, handle_known_error)

    def get_project(project_id: str) -> StoryboardProject:
        try:
            return pipeline.get(project_id)
        except UnknownProjectError:
            path = store.path_for(project_id)
            if not path.exists():
                raise
            project, events = store.load(path)
            pipeline.adopt(project, events)
            return pipeline.get(project_id)

    def persist(project: StoryboardProject) -> None:
        snapshot, events = pipeline.snapshot(project)
        store.save(snapshot, events)

    def project_response(project: StoryboardProject, **extra) -> dict:
        return {"project": project.to_dict(), **extra}

    # -- projects ------------------------------------------------------------

    @app.post("/projects", status_code=201)
    def create_project(body: CreateProjectBody) -> dict:
        config = GenerationConfig()
        if body.frame_count is not None:
            config.frame_count = body.frame_count
        project = pipeline.create_project(body.narrative, config)
        persist(project)
        return project_response(project)

    @app.get("/projects")
    def list_projects() -> dict:
        ids = sorted(set(pipeline.project_ids()) | set(store.list_ids()))
        summaries = []
        for project_id in ids:
            project = get_project(project_id)
            summaries.append(
                {
                    "id": project.id,
                    "narrative": project.narrative,
                    "frame_count": project.config.frame_count,
                    "updated_at": project.updated_at,
                }
            )
        return {"projects": summaries}

    @app.get("/projects/{project_id}")
    def get_project_endpoint(project_id: str) -> dict:
        return project_response(get_project(project_id))

    # -- style ---------------------------------------------------------------

    def style_payload(project: StoryboardProject) -> dict | None:
        return project.style.to_dict() if project.style is not None else None

    @app.post("/projects/{project_id}/style:generate")
    def style_generate(project_id: str) -> dict:
        project = get_project(project_id)
        style = pipeline.generate_style(project)
        persist(project)
        return project_response(project, style=style.to_dict())

    @app.post("/projects/{project_id}/style:regenerate")
    def style_regenerate(project_id: str) -> dict:
        project = get_project(project_id)
        style = pipeline.regenerate_style(project)
        persist(project)
        return project_response(project, style=style.to_dict())

    @app.post("/projects/{project_id}/style:reset")
    def style_reset(project_id: str) -> dict:
        project = get_project(project_id)
        pipeline.reset_style(project)
        persist(project)
        return project_response(project, style=style_payload(project))

    @app.put("/projects/{project_id}/style")
    def style_edit(project_id: str, body: StyleBody) -> dict:
        project = get_project(project_id)
        pipeline.edit_style(project, StyleParameters(**body.model_dump()))
        persist(project)
        return project_response(project, style=style_payload(project))

    # -- generation ------------------------------------------------------------

    @app.post("/projects/{project_id}/resubmit")
    def resubmit(project_id: str, run_async: int = Query(default=0, alias="async")) -> Any:
        project = get_project(project_id)
        if not run_async:
            frames = pipeline.resubmit(project)
            persist(project)
            return project_response(project, frames=[frame.to_dict() for frame in frames])

        job_id = app.state.jobs.start()

        def run() -> None:
            try:
                frames = pipeline.resubmit(project)
                persist(project)
                app.state.jobs.finish(
                    job_id,
                    {"project_id": project.id, "frames": [frame.to_dict() for frame in frames]},
                )
            except Exception as exc:
                log.warning("async resubmit for %s failed: %s", project.id, exc)
                app.state.jobs.fail(job_id, api_error_for(exc))

        threading.Thread(target=run, name=f"resubmit-{project.id[:8]}", daemon=True).start()
        return JSONResponse(status_code=202, content={"job_id": job_id, "status": "running"})

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str) -> Any:
        job = app.state.jobs.get(job_id)
        if job is None:
            return JSONResponse(
                status_code=404,
                content={"error": ApiError(404, "unknown-job", f"unknown job {job_id!r}", False).to_payload()},
            )
        return job

    @app.post("/projects/{project_id}/frames/{index}:regenerate")
    def frame_regenerate(project_id: str, index: int) -> dict:
        project = get_project(project_id)
        frame = pipeline.regenerate_frame(project, index)
        persist(project)
        return project_response(project, frame=frame.to_dict())

    @app.post("/projects/{project_id}/frames:refresh-stale")
    def frames_refresh_stale(project_id: str) -> dict:
        project = get_project(project_id)
        frames = pipeline.refresh_stale(project)
        persist(project)
        return project_response(project, frames=[frame.to_dict() for frame in frames])

    # -- frame edits --------------------------------------------------------------

    @app.put("/projects/{project_id}/frames/{index}/prompt")
    def frame_prompt_edit(project_id: str, index: int, body: PromptEditBody) -> dict:
        project = get_project(project_id)
        if body.view == "parameterized":
            if not isinstance(body.body, dict):
                raise PreconditionError("parameterized view takes an object of slot values")
            frame = pipeline.update_frame_from_parameters(
                project, index, FramePrompt.from_dict(body.body), render=body.render
            )
        else:
            if not isinstance(body.body, str):
                raise PreconditionError("natural view takes a string")
            frame = pipeline.update_frame_from_natural_language(project, index, body.body, render=body.render)
        persist(project)
        return project_response(project, frame=frame.to_dict())

    # -- project-level edits ---------------------------------------------------------

    @app.put("/projects/{project_id}/story")
    def story_edit(project_id: str, body: StoryBody) -> dict:
        project = get_project(project_id)
        pipeline.update_story(project, body.narrative)
        persist(project)
        return project_response(project)

    @app.put("/projects/{project_id}/frame-count")
    def frame_count_edit(project_id: str, body: FrameCountBody) -> dict:
        project = get_project(project_id)
        pipeline.set_frame_count(project, body.frame_count)
        persist(project)
        return project_response(project)

    # -- reads -----------------------------------------------------------------------

    @app.get("/projects/{project_id}/frames/{index}/image")
    def frame_image(project_id: str, index: int, request: Request) -> Response:
        project = get_project(project_id)
        if not 0 <= index < len(project.frames):
            raise IndexOutOfRangeError(index, len(project.frames))
        ref = project.frames[index].image_ref
        if not ref:
            raise NothingRenderedError()
        if ref in request.headers.get("if-none-match", ""):
            return Response(status_code=304, headers={"ETag": f'"{ref}"'})
        try:
            data = store.images.get(ref)
        except KeyError:
            return JSONResponse(
                status_code=404,
                content={"error": ApiError(404, "image-missing", f"image {ref} not in store", False).to_payload()},
            )
        return Response(content=data, media_type="image/png", headers={"ETag": f'"{ref}"'})

    @app.get("/projects/{project_id}/export")
    def export_bundle(project_id: str, formats: str = "png,html,json") -> Response:
        project = get_project(project_id)
        requested = {part.strip() for part in formats.split(",") if part.strip()}
        unknown = requested - {"png", "html", "json"}
        if not requested or unknown:
            raise PreconditionError(f"formats must name png, html and/or json, got {formats!r}")
        with tempfile.TemporaryDirectory() as tmp:
            export(project, store.images, tmp, requested)
            buffer = io.BytesIO()
            root = Path(tmp)
            with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as archive:
                for path in sorted(root.rglob("*")):
                    if path.is_file():
                        archive.write(path, path.relative_to(root))
        return Response(
            content=buffer.getvalue(),
            media_type="application/zip",
            headers={"Content-Disposition": f'attachment; filename="storyboard-{project.id}.zip"'},
        )

    @app.get("/healthz")
    def healthz() -> dict:
        statuses = {
            "chat": pipeline.chat_backend.health_check(),
            "image": pipeline.image_backend.health_check(),
        }
        states = {status.state for status in statuses.values()}
        if states == {HealthStatus.OK}:
            aggregate = HealthStatus.OK
        elif HealthStatus.OK in states or HealthStatus.DEGRADED in states:
            aggregate = HealthStatus.DEGRADED
        else:
            aggregate = HealthStatus.DOWN
        return {
            "status": aggregate,
            "backends": {
                name: {"state": status.state, "detail": status.detail} for name, status in statuses.items()
            },
        }

    static_dir = settings.static_dir
    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
