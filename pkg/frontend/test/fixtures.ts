/** Canned wire objects for unit tests. */

import type { FramePrompt, FrameRecord, FrameStatus, Project } from "../src/types.js";
import { emptyStyle } from "../src/types.js";

export function framePrompt(overrides: Partial<FramePrompt> = {}): FramePrompt {
  return {
    general_description: "a girl at a desk",
    object: "",
    person: "a girl with a braid",
    action: "writing",
    emotion: "",
    background: "a rainy window",
    style: "",
    shot: "medium shot",
    natural_language: "a girl at a desk, featuring a girl with a braid",
    ...overrides,
  };
}

export function frame(index: number, status: FrameStatus = "rendered", overrides: Partial<FrameRecord> = {}): FrameRecord {
  const rendered = status === "rendered" || status === "stale";
  return {
    index,
    prompt: framePrompt(),
    seed: 7,
    image_ref: rendered ? `ref-${index}` : null,
    status,
    lineage: rendered ? [{ timestamp: 1, trigger: "resubmit", image_ref: `ref-${index}` }] : [],
    error: "",
    ...overrides,
  };
}

export function project(overrides: Partial<Project> = {}): Project {
  const frames = overrides.frames ?? [frame(0), frame(1), frame(2)];
  return {
    id: "proj-1",
    narrative: "Cindy does her homework at night.",
    style: { ...emptyStyle(), art_type: "realistic", color: "warm tones" },
    frames,
    config: {
      frame_count: frames.length,
      image_width: 512,
      image_height: 512,
      seed_policy: { kind: "random-per-regeneration", seed: -1 },
      text_model_id: "gpt-4",
      image_model_id: "",
      negative_prompt: "",
      max_parse_retries: 2,
    },
    created_at: 1,
    updated_at: 2,
    ...overrides,
  };
}

export function jsonResponse(body: unknown, status = 200, headers: Record<string, string> = {}): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json", ...headers },
  });
}
