"""Shipping gates. Each test exercises one release criterion end to end
and prints a single [ACCEPTANCE] pass/fail line; the summary block at the
end of the pytest run repeats them."""

from __future__ import annotations

import copy
import json
import os
import random
import time
from contextlib import contextmanager
from pathlib import Path

import pytest

import conftest
from conftest import STORY, FailingImageBackend, ScriptedChatBackend, TickClock
from grammar_gen import fuzz_string, random_frame_prompt, random_style
from storyboard_engine import promptkit
from storyboard_engine.backends.base import ModelRefusalError, TransportError
from storyboard_engine.backends.mock import MockChatBackend, MockImageBackend
from storyboard_engine.cli import main
from storyboard_engine.core import (
    FramePrompt,
    FrameStatus,
    GenerationConfig,
    SeedPolicy,
    StyleParameters,
)
from storyboard_engine.pipeline import (
    IndexOutOfRangeError,
    MemoryImageStore,
    Pipeline,
    PreconditionError,
    replay_events,
)

# Captured at import time: the autouse settings-env scrub runs before each
# test body and would hide the opt-in variable.
LIVE_IMAGE_URL = os.environ.get("STORYBOARD_LIVE_IMAGE_URL", "")


def record(line: str) -> None:
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)


@contextmanager
def criterion(name: str):
    try:
        yield
    except Exception:
        record(f"[ACCEPTANCE] {name}: FAIL")
        raise
    record(f"[ACCEPTANCE] {name}: PASS")


def mock_pipeline(**kwargs) -> Pipeline:
    return Pipeline(
        MockChatBackend(),
        MockImageBackend(),
        MemoryImageStore(),
        clock=kwargs.pop("clock", TickClock()),
        rng=kwargs.pop("rng", random.Random(0)),
        **kwargs,
    )


def assert_replays(pipeline: Pipeline, project) -> None:
    assert replay_events(pipeline.event_log(project)).to_dict() == project.to_dict()


# -- 1: grammar round trips ---------------------------------------------------------


def test_grammar_round_trip_suite():
    with criterion("grammar-round-trip"):
        rng = random.Random(20240817)
        started = time.perf_counter()
        for _ in range(500):
            style = random_style(rng)
            assert promptkit.parse_style_reply(style.serialize()) == style
        for _ in range(500):
            prompt = random_frame_prompt(rng)
            text = promptkit.serialize_frame_prompt(prompt)
            parsed = promptkit.parse_frame_reply(text, 1)[0]
            assert parsed.as_pairs() == prompt.as_pairs()
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"round trips took {elapsed:.2f}s"


# -- 2: golden examples ----------------------------------------------------------------


STYLE_EXAMPLE = (
    "Age:{5-7}, Gender:{female}, Hair:{brown curl}, Clothing:{blue dress}, "
    "Scene:{under the soft glow of her desk lamp}, "
    "Location:{Indoor, in Cindy's warm and comfortable bedroom}, "
    "Color:{warm tones}, Art type:{realistic}, Lens and Shot:{Medium Shot}"
)

FRAME_EXAMPLE = (
    "General description: {A boy playing with a dog in a park}, "
    "Person: {A boy with a red hat and freckles}, "
    "Action: {playing fetch with a golden retriever dog}, "
    "Background: {outdoor, a sunny park with a lake}, "
    "Shot: {close-up}"
)


def test_golden_examples_parse_verbatim():
    with criterion("golden-examples"):
        style = promptkit.parse_style_reply(STYLE_EXAMPLE)
        assert style == StyleParameters(
            age="5-7",
            gender="female",
            hair="brown curl",
            clothing="blue dress",
            scene="under the soft glow of her desk lamp",
            location="Indoor, in Cindy's warm and comfortable bedroom",
            color="warm tones",
            art_type="realistic",
            lens_and_shot="Medium Shot",
        )

        (frame,) = promptkit.parse_frame_reply(FRAME_EXAMPLE, 1)
        assert frame.general_description == "A boy playing with a dog in a park"
        assert frame.person == "A boy with a red hat and freckles"
        assert frame.action == "playing fetch with a golden retriever dog"
        assert frame.background == "outdoor, a sunny park with a lake"
        assert frame.shot == "close-up"
        assert frame.object == ""
        assert frame.emotion == ""
        assert frame.style == ""


# -- 3: template substitution ---------------------------------------------------------


def test_frame_template_substitution():
    with criterion("template-substitution"):
        for n in range(1, 65):
            text = promptkit.build_frame_system_prompt(n)
            assert f"generate {n} prompts" in text
            assert "PIC-NUM-NEEDED" not in text


# -- 4: end-to-end determinism ----------------------------------------------------------


def scrub_timestamps(node):
    if isinstance(node, dict):
        return {
            key: (None if key in ("created_at", "updated_at", "timestamp") else scrub_timestamps(value))
            for key, value in node.items()
        }
    if isinstance(node, list):
        return [scrub_timestamps(item) for item in node]
    return node


def bundle_fingerprint(out_dir: Path) -> dict:
    fingerprint = {}
    for path in sorted(out_dir.rglob("*")):
        if not path.is_file():
            continue
        relative = str(path.relative_to(out_dir))
        if path.name.endswith(".json") and (path.name == "project.json" or path.parent.name == "projects"):
            document = json.loads(path.read_text(encoding="utf-8"))
            fingerprint[relative] = scrub_timestamps(document)
        else:
            fingerprint[relative] = path.read_bytes()
    return fingerprint


def test_cli_generate_is_deterministic(tmp_path, monkeypatch, capsys):
    with criterion("mock-e2e-determinism"):
        monkeypatch.chdir(tmp_path)
        story = tmp_path / "story.txt"
        story.write_text(STORY, encoding="utf-8")
        started = time.perf_counter()
        fingerprints = []
        for run in ("first", "second"):
            out = tmp_path / run
            code = main(
                ["generate", "--story", str(story), "--mock",
                 "--frames", "6", "--seed", "7", "--out", str(out)]
            )
            assert code == 0, capsys.readouterr().err
            fingerprints.append(bundle_fingerprint(out))
        elapsed = time.perf_counter() - started
        capsys.readouterr()

        first, second = fingerprints
        assert sorted(first) == sorted(second)
        for relative in first:
            assert first[relative] == second[relative], f"{relative} differs between runs"
        assert elapsed < 10.0, f"two runs took {elapsed:.2f}s"


# -- 5: frame isolation ---------------------------------------------------------------


def test_regenerating_one_frame_leaves_others_untouched():
    with criterion("frame-isolation"):
        pipeline = mock_pipeline()
        project = pipeline.create_project(STORY)
        pipeline.resubmit(project)
        for i in range(6):
            others_before = {
                j: (project.frames[j].to_dict(), pipeline.image_store.get(project.frames[j].image_ref))
                for j in range(6)
                if j != i
            }
            record_i = pipeline.regenerate_frame(project, i)
            assert record_i.status == FrameStatus.RENDERED
            for j, (frame_dict, image_bytes) in others_before.items():
                assert project.frames[j].to_dict() == frame_dict, f"frame {j} changed while regenerating {i}"
                assert pipeline.image_store.get(project.frames[j].image_ref) == image_bytes
        assert_replays(pipeline, project)


# -- 6: style propagation ----------------------------------------------------------------


def test_realistic_art_type_reaches_every_flat_prompt():
    with criterion("style-propagation"):
        pipeline = mock_pipeline()
        project = pipeline.create_project(STORY)
        style = pipeline.generate_style(project)
        edited = copy.deepcopy(style)
        edited.art_type = "realistic"
        pipeline.edit_style(project, edited)
        frames = pipeline.resubmit(project)
        assert len(frames) == 6
        rendered_prompts = [
            event.payload["image_prompt"]
            for event in pipeline.event_log(project)
            if event.kind == "frame-rendered"
        ][-6:]
        assert len(rendered_prompts) == 6
        for prompt in rendered_prompts:
            assert "realistic" in prompt


# -- 7: edit semantics against the event-log oracle ----------------------------------------


def test_edit_sequences_replay_exactly():
    with criterion("edit-semantics-replay"):
        valid_style = STYLE_EXAMPLE

        # Refusal then valid reply: one retry, recorded in the event payload.
        scripted = Pipeline(
            ScriptedChatBackend(["sorry, I cannot", valid_style]),
            MockImageBackend(),
            MemoryImageStore(),
            clock=TickClock(),
        )
        project = scripted.create_project(STORY)
        scripted.generate_style(project)
        event = scripted.event_log(project)[-1]
        assert event.kind == "style-generated"
        assert event.payload["retry_count"] == 1
        assert_replays(scripted, project)

        # Regenerate twice: two events, latest wins, different from the first.
        pipeline = mock_pipeline()
        project = pipeline.create_project(STORY)
        first = pipeline.generate_style(project)
        second = pipeline.regenerate_style(project)
        third = pipeline.regenerate_style(project)
        assert second != first and third != second
        kinds = [e.kind for e in pipeline.event_log(project)]
        assert kinds.count("style-regenerated") == 2
        assert project.style == third
        assert_replays(pipeline, project)

        # Chat backend down: regeneration fails, style keeps its value.
        before = copy.deepcopy(project.style)
        pipeline.chat_backend = ScriptedChatBackend([TransportError("down")])
        with pytest.raises(TransportError):
            pipeline.regenerate_style(project)
        assert project.style == before
        pipeline.chat_backend = MockChatBackend()

        # Reset with a style: all fields empty, frames stale after render.
        pipeline.resubmit(project)
        pipeline.reset_style(project)
        assert project.style == StyleParameters()
        assert all(f.status == FrameStatus.STALE for f in project.frames)
        assert_replays(pipeline, project)

        # Resubmit after reset regenerates the style first.
        frames = pipeline.resubmit(project)
        assert project.style is not None and not project.style.is_empty()
        assert all(f.status == FrameStatus.RENDERED for f in frames)
        assert_replays(pipeline, project)

        # Reset without a style: no-op plus an event.
        fresh = mock_pipeline()
        blank = fresh.create_project(STORY)
        fresh.reset_style(blank)
        assert blank.style is None
        assert [e.kind for e in fresh.event_log(blank)] == ["project-created", "style-reset"]
        assert_replays(fresh, blank)

        # Deterministic resubmit: same seed, same project state and bytes.
        def seeded():
            p = Pipeline(
                MockChatBackend(), MockImageBackend(), MemoryImageStore(),
                clock=TickClock(), id_factory=lambda: "same-id",
            )
            proj = p.create_project(STORY, GenerationConfig(seed_policy=SeedPolicy.fixed(7)))
            p.resubmit(proj)
            return p, proj

        p1, proj1 = seeded()
        p2, proj2 = seeded()
        assert proj1.to_dict() == proj2.to_dict()
        for a, b in zip(proj1.frames, proj2.frames):
            assert p1.image_store.get(a.image_ref) == p2.image_store.get(b.image_ref)

        # Single-frame request plumbs n=1 into the template.
        chat = ScriptedChatBackend([valid_style, "General description: {one beat}"])
        single = Pipeline(chat, MockImageBackend(), MemoryImageStore(), clock=TickClock())
        one = single.create_project(STORY, GenerationConfig(frame_count=1))
        single.resubmit(one)
        assert "generate 1 prompts" in chat.requests[-1].system_prompt
        assert_replays(single, one)

        # Image backend down during resubmit: prompts kept, failures per frame.
        downed = Pipeline(
            MockChatBackend(), FailingImageBackend(), MemoryImageStore(), clock=TickClock()
        )
        unlucky = downed.create_project(STORY)
        frames = downed.resubmit(unlucky)
        assert all(f.status == FrameStatus.PROMPT_READY for f in frames)
        assert all(f.error for f in frames)
        assert_replays(downed, unlucky)

        # Regenerate frame 2 of 6: the others stay byte-identical.
        pipeline = mock_pipeline()
        project = pipeline.create_project(STORY)
        pipeline.resubmit(project)
        others = [project.frames[j].to_dict() for j in range(6) if j != 2]
        pipeline.regenerate_frame(project, 2)
        assert [project.frames[j].to_dict() for j in range(6) if j != 2] == others
        assert_replays(pipeline, project)

        # Fixed seed: regeneration reproduces the same bytes.
        fixed = mock_pipeline()
        locked = fixed.create_project(STORY, GenerationConfig(seed_policy=SeedPolicy.fixed(7)))
        fixed.resubmit(locked)
        bytes_before = fixed.image_store.get(locked.frames[1].image_ref)
        regenerated = fixed.regenerate_frame(locked, 1)
        assert fixed.image_store.get(regenerated.image_ref) == bytes_before

        # Out-of-range index is rejected.
        with pytest.raises(IndexOutOfRangeError):
            pipeline.regenerate_frame(project, 9)

        # Slot edit with render: object swap lands, frame re-renders.
        base_prompt = copy.deepcopy(project.frames[0].prompt)
        base_prompt.object = "Computer"
        pipeline.update_frame_from_parameters(project, 0, base_prompt, render=True)
        swapped = copy.deepcopy(project.frames[0].prompt)
        swapped.object = "Phone"
        result = pipeline.update_frame_from_parameters(project, 0, swapped, render=True)
        assert result.prompt.object == "Phone"
        assert result.status == FrameStatus.RENDERED
        assert_replays(pipeline, project)

        # Slot edit without render: stale, image untouched.
        ref_before = project.frames[3].image_ref
        result = pipeline.update_frame_from_parameters(
            project, 3, FramePrompt(general_description="a quiet ending"), render=False
        )
        assert result.status == FrameStatus.STALE
        assert result.image_ref == ref_before
        assert_replays(pipeline, project)

        # Empty general description is rejected.
        with pytest.raises(PreconditionError):
            pipeline.update_frame_from_parameters(project, 0, FramePrompt(object="Phone"))

        # Natural-language edit keeps the text verbatim.
        text = "On the left a girl, on the right a glowing phone screen."
        result = pipeline.update_frame_from_natural_language(project, 5, text, render=False)
        assert result.prompt.natural_language == text
        assert_replays(pipeline, project)

        # Empty text is rejected; a refusal leaves the frame unchanged.
        with pytest.raises(PreconditionError):
            pipeline.update_frame_from_natural_language(project, 5, "  ")
        frame_before = project.frames[5].to_dict()
        pipeline.chat_backend = ScriptedChatBackend([ModelRefusalError("no")])
        with pytest.raises(ModelRefusalError):
            pipeline.update_frame_from_natural_language(project, 5, "another description")
        assert project.frames[5].to_dict() == frame_before
        pipeline.chat_backend = MockChatBackend()
        assert_replays(pipeline, project)

        # Story replacement marks every frame stale.
        pipeline.update_story(project, "An entirely different story.")
        assert project.narrative == "An entirely different story."
        assert all(f.status == FrameStatus.STALE for f in project.frames)
        assert_replays(pipeline, project)

        # Frame-count changes: truncate, extend, and preserve survivors.
        pipeline.resubmit(project)
        first_four = [f.to_dict() for f in project.frames[:4]]
        pipeline.set_frame_count(project, 4)
        assert len(project.frames) == 4
        pipeline.set_frame_count(project, 6)
        assert [f.to_dict() for f in project.frames[:4]] == first_four
        assert project.frames[5].status == FrameStatus.EMPTY
        assert_replays(pipeline, project)


# -- 8: comparison harness shape --------------------------------------------------------


def test_cli_compare_emits_two_cells(tmp_path, monkeypatch, capsys):
    with criterion("comparison-shape"):
        monkeypatch.chdir(tmp_path)
        story = tmp_path / "story.txt"
        story.write_text(STORY, encoding="utf-8")
        out = tmp_path / "cmp"
        code = main(
            ["compare", "--story", str(story), "--mock",
             "--modes", "nl,param", "--frames", "6", "--out", str(out)]
        )
        assert code == 0, capsys.readouterr().err
        capsys.readouterr()
        manifest = json.loads((out / "comparison_manifest.json").read_text(encoding="utf-8"))
        assert len(manifest["cells"]) == 2
        assert {cell["mode"] for cell in manifest["cells"]} == {"natural-language", "parameterized"}
        for cell in manifest["cells"]:
            assert len(cell["images"]) == 6
            for image in cell["images"]:
                assert 1 <= image["attempts"] <= 2
                assert image["image_ref"]


# -- 9: parser fuzz -------------------------------------------------------------------


def test_parsers_raise_only_declared_errors():
    with criterion("parser-fuzz"):
        rng = random.Random(99)
        for index in range(10_000):
            raw = fuzz_string(rng)
            try:
                promptkit.parse_style_reply(raw)
            except promptkit.ParseError:
                pass
            try:
                promptkit.parse_frame_reply(raw, rng.randint(1, 4))
            except promptkit.ParseError:
                pass


# -- 10: live backend latency (opt-in) -----------------------------------------------------


def test_live_image_latency_report():
    name = "live-image-latency"
    if not LIVE_IMAGE_URL:
        record(f"[ACCEPTANCE] {name}: SKIPPED (set STORYBOARD_LIVE_IMAGE_URL to run)")
        pytest.skip("no live image endpoint configured")
    from storyboard_engine.backends.a1111 import A1111ImageBackend
    from storyboard_engine.backends.base import ImageRequest

    backend = A1111ImageBackend(LIVE_IMAGE_URL)
    latencies = []
    for seed in (1, 2, 3):
        request = ImageRequest(prompt="a lighthouse at dawn", seed=seed, width=512, height=512)
        started = time.perf_counter()
        backend.txt2img(request)
        latencies.append(time.perf_counter() - started)
    mean = sum(latencies) / len(latencies)
    verdict = "within" if mean <= 5.0 else "beyond"
    # Reported, not gating: hardware varies too much for a hard limit.
    record(f"[ACCEPTANCE] {name}: PASS (mean {mean:.2f}s/image, {verdict} 5x of 1s/512px baseline)")
