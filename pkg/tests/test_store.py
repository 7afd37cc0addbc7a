"""Persistence and export: project files, image blobs, contact sheets."""

from __future__ import annotations

import hashlib
import json
import shutil

import pytest
from PIL import Image

from conftest import STORY, TickClock
from storyboard_engine.backends.mock import MockChatBackend, MockImageBackend
from storyboard_engine.core import FrameStatus, GenerationConfig, SeedPolicy
from storyboard_engine.pipeline import Pipeline, replay_events
from storyboard_engine.store import (
    CAPTION_HEIGHT,
    MARGIN,
    SCHEMA_VERSION,
    CorruptProjectFileError,
    ImageStore,
    InvalidProjectError,
    NothingRenderedError,
    ProjectStore,
    UnsupportedSchemaError,
    build_manifest,
    cell_origin,
    export,
    grid_geometry,
)


@pytest.fixture
def store(tmp_path):
    return ProjectStore(tmp_path / "data")


@pytest.fixture
def rendered(store):
    """A fully rendered 6-frame project persisted through the disk stores."""
    pipeline = Pipeline(
        MockChatBackend(),
        MockImageBackend(),
        store.images,
        clock=TickClock(),
        id_factory=lambda: "proj-under-test",
    )
    project = pipeline.create_project(
        STORY, GenerationConfig(seed_policy=SeedPolicy.fixed(7))
    )
    pipeline.resubmit(project)
    return pipeline, project


# -- ImageStore -----------------------------------------------------------------


def test_image_store_put_get_contains(tmp_path):
    images = ImageStore(tmp_path / "images")
    data = b"\x89PNG fake bytes"
    ref = images.put(data)
    assert ref == hashlib.sha256(data).hexdigest()
    assert ref in images
    assert images.get(ref) == data
    assert images.path_for(ref).name == f"{ref}.png"
    with pytest.raises(KeyError):
        images.get("0" * 64)


def test_image_store_dedupes(tmp_path):
    images = ImageStore(tmp_path / "images")
    ref = images.put(b"same")
    again = images.put(b"same")
    assert ref == again
    pngs = list((tmp_path / "images").glob("*.png"))
    assert len(pngs) == 1


def test_stores_recreate_deleted_directories(store, rendered):
    """Writes survive the data directories vanishing under a live process."""
    _, project = rendered
    shutil.rmtree(store.images.root)
    ref = store.images.put(b"fresh bytes")
    assert store.images.get(ref) == b"fresh bytes"

    shutil.rmtree(store.projects_dir)
    store.save(project)
    loaded, _ = store.load(project.id)
    assert loaded.id == project.id


# -- ProjectStore -----------------------------------------------------------------


def test_save_load_round_trip(store, rendered):
    pipeline, project = rendered
    events = pipeline.event_log(project)
    path = store.save(project, events)
    assert path == store.path_for(project.id)

    loaded, loaded_events = store.load(project.id)
    assert loaded.to_dict() == project.to_dict()
    assert [e.to_dict() for e in loaded_events] == [e.to_dict() for e in events]
    assert replay_events(loaded_events).to_dict() == loaded.to_dict()


def test_save_is_reproducible(store, rendered):
    pipeline, project = rendered
    events = pipeline.event_log(project)
    path = store.save(project, events)
    first = path.read_bytes()
    store.save(project, events)
    assert path.read_bytes() == first


def test_load_accepts_path_or_id(store, rendered):
    pipeline, project = rendered
    path = store.save(project, pipeline.event_log(project))
    by_path, _ = store.load(path)
    by_id, _ = store.load(project.id)
    assert by_path.to_dict() == by_id.to_dict()
    with pytest.raises(FileNotFoundError):
        store.load("missing-project")


def test_save_rejects_invalid_project(store, rendered):
    _, project = rendered
    project.frames[0].image_ref = None  # rendered frame without an image
    with pytest.raises(InvalidProjectError) as excinfo:
        store.save(project)
    assert any("image_ref" in violation for violation in excinfo.value.violations)


def test_load_rejects_corrupt_file(store, rendered):
    pipeline, project = rendered
    path = store.save(project, pipeline.event_log(project))
    path.write_text("{ not json", encoding="utf-8")
    with pytest.raises(CorruptProjectFileError):
        store.load(path)
    path.write_text(json.dumps({"project": {}}), encoding="utf-8")
    with pytest.raises(CorruptProjectFileError):
        store.load(path)
    truncated = json.dumps({"schema_version": SCHEMA_VERSION, "project": {"id": "x"}})
    path.write_text(truncated, encoding="utf-8")
    with pytest.raises(CorruptProjectFileError):
        store.load(path)


def test_load_rejects_unknown_schema(store, rendered):
    pipeline, project = rendered
    path = store.save(project, pipeline.event_log(project))
    document = json.loads(path.read_text(encoding="utf-8"))
    document["schema_version"] = 99
    path.write_text(json.dumps(document), encoding="utf-8")
    with pytest.raises(UnsupportedSchemaError) as excinfo:
        store.load(path)
    assert excinfo.value.found == 99


def test_load_downgrades_dangling_image_refs(store, rendered):
    pipeline, project = rendered
    store.save(project, pipeline.event_log(project))
    victim_ref = project.frames[2].image_ref
    store.images.path_for(victim_ref).unlink()

    loaded, _ = store.load(project.id)
    frame = loaded.frames[2]
    assert frame.image_ref is None
    assert frame.status == FrameStatus.STALE
    assert frame.error == "image file missing from store"
    others = [f for f in loaded.frames if f.index != 2]
    assert all(f.status == FrameStatus.RENDERED for f in others)


def test_list_ids(store, rendered):
    pipeline, project = rendered
    assert store.list_ids() == []
    store.save(project, pipeline.event_log(project))
    assert store.list_ids() == [project.id]


# -- manifest -------------------------------------------------------------------


def test_manifest_contents(rendered):
    _, project = rendered
    manifest = build_manifest(project)
    assert manifest["project_id"] == project.id
    assert manifest["narrative"] == STORY
    assert manifest["frame_count"] == 6
    assert len(manifest["frames"]) == 6
    for i, entry in enumerate(manifest["frames"]):
        assert entry["frame_number"] == i + 1
        assert entry["image_hash"] == project.frames[i].image_ref
        assert entry["natural_language"] == project.frames[i].prompt.natural_language
        assert entry["image_prompt"]
        assert entry["seed"] == 7


def test_manifest_has_no_timestamps(rendered):
    _, project = rendered
    text = json.dumps(build_manifest(project))
    for needle in ("created_at", "updated_at", "timestamp"):
        assert needle not in text


def test_manifest_image_hash_matches_file(store, rendered):
    _, project = rendered
    manifest = build_manifest(project)
    for entry in manifest["frames"]:
        data = store.images.get(entry["image_hash"])
        assert hashlib.sha256(data).hexdigest() == entry["image_hash"]


# -- geometry --------------------------------------------------------------------


def test_grid_geometry_six_frames(rendered):
    _, project = rendered
    geometry = grid_geometry(project)
    assert (geometry["columns"], geometry["rows"]) == (3, 2)
    assert geometry["cell_width"] == 512
    assert geometry["cell_height"] == 512 + CAPTION_HEIGHT
    assert cell_origin(geometry, 0) == (MARGIN, MARGIN)
    assert cell_origin(geometry, 4) == (
        MARGIN + geometry["cell_width"] + 16,
        MARGIN + geometry["cell_height"] + 16,
    )


def test_grid_geometry_single_frame(store):
    pipeline = Pipeline(MockChatBackend(), MockImageBackend(), store.images)
    project = pipeline.create_project(STORY, GenerationConfig(frame_count=1))
    geometry = grid_geometry(project)
    assert (geometry["columns"], geometry["rows"]) == (1, 1)


# -- export -----------------------------------------------------------------------


def test_export_full_bundle(store, rendered, tmp_path):
    _, project = rendered
    out = tmp_path / "export"
    bundle = export(project, store.images, out)

    assert bundle.manifest_path.exists()
    assert bundle.contact_sheet_path.exists()
    assert bundle.html_path.exists()
    assert len(bundle.frame_image_paths) == 6
    assert bundle.frame_image_paths[0].name == "frame_01.png"

    manifest = json.loads(bundle.manifest_path.read_text(encoding="utf-8"))
    assert manifest == bundle.manifest

    geometry = grid_geometry(project)
    with Image.open(bundle.contact_sheet_path) as sheet:
        assert sheet.size == (geometry["sheet_width"], geometry["sheet_height"])
        # Each cell's top-left pixel comes from the frame image, not the
        # white sheet background.
        for frame in project.frames:
            x, y = cell_origin(geometry, frame.index)
            with Image.open(store.images.path_for(frame.image_ref)) as img:
                expected = img.convert("RGB").getpixel((0, 0))
            assert sheet.getpixel((x, y)) == expected
        # Margins stay background-colored.
        assert sheet.getpixel((0, 0)) == (255, 255, 255)


def test_export_subset_of_formats(store, rendered, tmp_path):
    _, project = rendered
    bundle = export(project, store.images, tmp_path / "only-json", {"json"})
    assert bundle.manifest_path is not None
    assert bundle.contact_sheet_path is None
    assert bundle.html_path is None
    assert bundle.frame_image_paths == []


def test_export_rejects_unknown_format(store, rendered, tmp_path):
    _, project = rendered
    with pytest.raises(ValueError):
        export(project, store.images, tmp_path / "bad", {"png", "gif"})


def test_export_requires_a_rendered_frame(store, tmp_path):
    pipeline = Pipeline(MockChatBackend(), MockImageBackend(), store.images)
    project = pipeline.create_project(STORY)
    with pytest.raises(NothingRenderedError):
        export(project, store.images, tmp_path / "empty")


def test_export_is_read_only(store, rendered, tmp_path):
    pipeline, project = rendered
    path = store.save(project, pipeline.event_log(project))
    before = path.read_bytes()
    snapshot = project.to_dict()
    export(project, store.images, tmp_path / "export")
    assert project.to_dict() == snapshot
    assert path.read_bytes() == before


def test_export_unrendered_frames_get_placeholders(store, tmp_path):
    pipeline = Pipeline(MockChatBackend(), MockImageBackend(), store.images)
    project = pipeline.create_project(STORY, GenerationConfig(frame_count=2))
    pipeline.resubmit(project)
    project.frames[1].image_ref = None
    project.frames[1].status = FrameStatus.PROMPT_READY
    bundle = export(project, store.images, tmp_path / "partial", {"png"})
    assert len(bundle.frame_image_paths) == 1
    geometry = grid_geometry(project)
    with Image.open(bundle.contact_sheet_path) as sheet:
        x, y = cell_origin(geometry, 1)
        assert sheet.getpixel((x, y)) == (226, 226, 226)


def test_export_html_is_self_contained(store, rendered, tmp_path):
    pipeline, project = rendered
    pipeline.update_story(project, "Tags like <script> must be escaped & neutralized.")
    pipeline.refresh_stale(project)
    bundle = export(project, store.images, tmp_path / "html", {"html"})
    page = bundle.html_path.read_text(encoding="utf-8")
    assert page.count("data:image/png;base64,") == 6
    assert "<script>" not in page
    assert "&lt;script&gt;" in page
    assert "frame 1" in page
    assert 'src="http' not in page
