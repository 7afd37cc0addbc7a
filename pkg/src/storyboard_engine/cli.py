"""Command-line entry points.

generate: story file in, export bundle out, with per-stage timings.
compare: render the same story under both prompting modes across image
backends and write a side-by-side report.
inspect: print a saved project's narrative, style, and frame table.
serve: run the HTTP service.

Exit codes for generate/compare: 0 full success, 2 partial frame
failure, 1 fatal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import time
from pathlib import Path

from .backends.base import BackendError
from .config import Settings, load_settings, make_chat_backend, make_image_backend
from .core import FrameStatus, GenerationConfig, SeedPolicy
from .harness import run_comparison_harness
from .pipeline import Pipeline, PipelineError
from .store import (
    CorruptProjectFileError,
    ImageStore,
    NothingRenderedError,
    ProjectStore,
    StoreError,
    UnsupportedSchemaError,
    export,
)

__all__ = ["main"]

_MODE_ALIASES = {
    "nl": "natural-language",
    "natural-language": "natural-language",
    "param": "parameterized",
    "parameterized": "parameterized",
}

# Observed ballparks for sizing expectations, printed as context only:
# local 512x512 diffusion backends run near 1 s per image, hosted image
# APIs nearer 15 s per image.
_LATENCY_CONTEXT = (
    "context: local 512x512 diffusion backends run near 1 s/image; hosted image APIs nearer 15 s/image"
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (PipelineError, BackendError, StoreError, OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="storyboard", description="Narrative-to-storyboard generation engine")
    subparsers = parser.add_subparsers(dest="command", required=True)

    generate = subparsers.add_parser("generate", help="generate a storyboard from a story file")
    generate.add_argument("--story", required=True, help="story text file, or - for stdin")
    generate.add_argument("--frames", type=int, default=None, help="number of frames (default 6)")
    generate.add_argument("--seed", type=int, default=None, help="fixed image seed for reproducible runs")
    generate.add_argument("--out", default="storyboard-out", help="output directory")
    generate.add_argument("--formats", default="png,html,json", help="export formats, comma-separated")
    _add_backend_flags(generate)
    generate.set_defaults(handler=cmd_generate)

    compare = subparsers.add_parser("compare", help="compare prompting modes across image backends")
    compare.add_argument("--story", required=True, help="story text file, or - for stdin")
    compare.add_argument("--modes", default="nl,param", help="comma-separated: nl, param")
    compare.add_argument("--backends", default=None, help="comma-separated image backend names")
    compare.add_argument("--frames", type=int, default=None, help="number of frames (default 6)")
    compare.add_argument("--out", default="comparison-out", help="output directory")
    _add_backend_flags(compare)
    compare.set_defaults(handler=cmd_compare)

    inspect = subparsers.add_parser("inspect", help="print a saved project file")
    inspect.add_argument("project_file", help="path to a project JSON file")
    inspect.add_argument("--json", action="store_true", help="print the raw project JSON")
    inspect.set_defaults(handler=cmd_inspect)

    serve = subparsers.add_parser("serve", help="run the HTTP service")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    serve.add_argument("--data-dir", default=None)
    serve.add_argument("--static-dir", default=None, help="directory of built web UI assets to serve at /ui")
    serve.add_argument("--mock-backends", action="store_true", help="use the deterministic offline backends")
    serve.add_argument("--config", default=None, help="settings file (JSON)")
    serve.set_defaults(handler=cmd_serve)

    return parser


def _add_backend_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--mock", action="store_true", help="use the deterministic offline backends")
    sub.add_argument("--config", default=None, help="settings file (JSON)")
    sub.add_argument("--chat-url", default=None, help="chat completions base URL")
    sub.add_argument("--image-url", default=None, help="image backend base URL")
    sub.add_argument("--image-backend", default=None, help="image backend name (mock, a1111, openai-images)")


def _settings_from(args: argparse.Namespace) -> Settings:
    return load_settings(
        args.config,
        overrides={
            "mock_backends": True if getattr(args, "mock", False) else None,
            "chat_base_url": getattr(args, "chat_url", None),
            "image_base_url": getattr(args, "image_url", None),
            "image_backend": getattr(args, "image_backend", None),
        },
    )


def _read_story(source: str) -> str:
    if source == "-":
        return sys.stdin.read()
    return Path(source).read_text(encoding="utf-8")


def _print_timings(timings: list[tuple[str, float]]) -> None:
    print("\nstage       seconds")
    for label, seconds in timings:
        print(f"{label:<11} {seconds:7.2f}")
    print(_LATENCY_CONTEXT)


def cmd_generate(args: argparse.Namespace) -> int:
    story = _read_story(args.story)
    if not story.strip():
        print("error: narrative must be non-empty", file=sys.stderr)
        return 1
    frame_count = args.frames if args.frames is not None else 6
    if frame_count < 1:
        print(f"error: --frames must be >= 1, got {frame_count}", file=sys.stderr)
        return 1
    formats = {part.strip() for part in args.formats.split(",") if part.strip()}
    unknown = formats - {"png", "html", "json"}
    if not formats or unknown:
        print(f"error: --formats must name png, html and/or json, got {args.formats!r}", file=sys.stderr)
        return 1

    settings = _settings_from(args)
    out_dir = Path(args.out)
    store = ProjectStore(out_dir)
    seed_policy = SeedPolicy.fixed(args.seed) if args.seed is not None else SeedPolicy()
    config = GenerationConfig(
        frame_count=frame_count,
        seed_policy=seed_policy,
        text_model_id=settings.text_model_id,
        image_model_id=settings.image_model_id if settings.image_backend == "openai-images" else "",
    )
    # Rerunning the same story with the same knobs must reproduce the same
    # bundle, so the project id is content-derived rather than random.
    project_id = hashlib.sha256(
        "\x1f".join([story, str(frame_count), seed_policy.kind, str(seed_policy.seed)]).encode("utf-8")
    ).hexdigest()[:32]
    # An explicit --image-backend wins over --mock, so a mocked chat model
    # can still drive a real image endpoint.
    pipeline = Pipeline(
        make_chat_backend(settings),
        make_image_backend(settings, args.image_backend),
        store.images,
        id_factory=lambda: project_id,
    )

    timings = []
    project = pipeline.create_project(story, config)

    started = time.perf_counter()
    pipeline.generate_style(project)
    timings.append(("style", time.perf_counter() - started))
    store.save(project, pipeline.event_log(project))

    started = time.perf_counter()
    frames = pipeline.resubmit(project)
    timings.append(("frames", time.perf_counter() - started))
    store.save(project, pipeline.event_log(project))
    shutil.copyfile(store.path_for(project.id), out_dir / "project.json")

    failed = [frame for frame in frames if frame.status != FrameStatus.RENDERED]
    started = time.perf_counter()
    try:
        export(project, store.images, out_dir, formats)
    except NothingRenderedError:
        print("no frame rendered; skipping contact sheet export (prompts are in project.json)", file=sys.stderr)
    timings.append(("export", time.perf_counter() - started))

    print(f"project {project.id}: {len(frames) - len(failed)}/{len(frames)} frames rendered -> {out_dir}")
    for frame in failed:
        print(f"  frame {frame.index + 1} failed: {frame.error}", file=sys.stderr)
    _print_timings(timings)
    return 2 if failed else 0


def cmd_compare(args: argparse.Namespace) -> int:
    story = _read_story(args.story)
    if not story.strip():
        print("error: narrative must be non-empty", file=sys.stderr)
        return 1
    frame_count = args.frames if args.frames is not None else 6
    if frame_count < 1:
        print(f"error: --frames must be >= 1, got {frame_count}", file=sys.stderr)
        return 1

    modes = []
    for raw in args.modes.split(","):
        name = raw.strip()
        if not name:
            continue
        if name not in _MODE_ALIASES:
            print(f"error: unknown mode {name!r} (choose from nl, param)", file=sys.stderr)
            return 1
        mode = _MODE_ALIASES[name]
        if mode not in modes:
            modes.append(mode)
    if not modes:
        print("error: --modes named no modes", file=sys.stderr)
        return 1

    settings = _settings_from(args)
    backend_names = args.backends or ("mock" if settings.mock_backends else settings.image_backend)
    try:
        backends = [
            make_image_backend(settings, name.strip())
            for name in backend_names.split(",")
            if name.strip()
        ]
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    if not backends:
        print("error: --backends named no backends", file=sys.stderr)
        return 1

    out_dir = Path(args.out)
    report = run_comparison_harness(
        story,
        frame_count,
        modes,
        backends,
        chat_backend=make_chat_backend(settings),
        image_store=ImageStore(out_dir / "images"),
        out_dir=out_dir,
        config=GenerationConfig(frame_count=frame_count, text_model_id=settings.text_model_id),
    )

    print(f"{'cell':<40} {'ok':>3} {'failed':>6} {'mean ms':>8}")
    any_failed = False
    for cell in report.cells:
        latencies = [image.latency_ms for image in cell.images if image.latency_ms is not None]
        mean = sum(latencies) / len(latencies) if latencies else 0.0
        failed = cell.failed_count()
        any_failed = any_failed or failed > 0
        print(f"{cell.label:<40} {len(cell.images) - failed:>3} {failed:>6} {mean:>8.1f}")
    print(_LATENCY_CONTEXT)
    print(f"report -> {report.manifest_path}")
    return 2 if any_failed else 0


def cmd_inspect(args: argparse.Namespace) -> int:
    path = Path(args.project_file)
    root = path.parent.parent if path.parent.name == "projects" else path.parent
    try:
        project, events = ProjectStore(root).load(path)
    except (CorruptProjectFileError, UnsupportedSchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1

    if args.json:
        print(json.dumps(project.to_dict(), indent=2, sort_keys=True))
        return 0

    print(f"project {project.id} ({len(events)} events)")
    print(f"narrative: {project.narrative}")
    if project.style is None:
        print("style: (none)")
    else:
        print("style:")
        for label, value in project.style.as_pairs():
            print(f"  {label:<14} {value}")
    print(f"{'#':>2} {'status':<12} {'seed':>10} {'slots':>5} {'image':<14} error")
    for frame in project.frames:
        image = (frame.image_ref or "")[:12]
        print(
            f"{frame.index + 1:>2} {frame.status:<12} {frame.seed:>10} "
            f"{frame.prompt.populated_count():>5} {image:<14} {frame.error}"
        )
        if frame.prompt.natural_language:
            print(f"   caption: {frame.prompt.natural_language}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    settings = load_settings(
        args.config,
        overrides={
            "host": args.host,
            "port": args.port,
            "data_dir": args.data_dir,
            "static_dir": args.static_dir,
            "mock_backends": True if args.mock_backends else None,
        },
    )
    uvicorn.run(create_app(settings), host=settings.host, port=settings.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(main())
