/** Wire types mirroring the service's project JSON. */

export interface StyleParameters {
  age: string;
  gender: string;
  hair: string;
  clothing: string;
  scene: string;
  location: string;
  color: string;
  art_type: string;
  lens_and_shot: string;
}

export interface FramePrompt {
  general_description: string;
  object: string;
  person: string;
  action: string;
  emotion: string;
  background: string;
  style: string;
  shot: string;
  natural_language: string;
}

export type FrameStatus = "empty" | "prompt-ready" | "rendered" | "stale";

export interface LineageEntry {
  timestamp: number;
  trigger: string;
  image_ref: string;
}

export interface FrameRecord {
  index: number;
  prompt: FramePrompt;
  seed: number;
  image_ref: string | null;
  status: FrameStatus;
  lineage: LineageEntry[];
  error: string;
}

export interface SeedPolicy {
  kind: string;
  seed: number;
}

export interface GenerationConfig {
  frame_count: number;
  image_width: number;
  image_height: number;
  seed_policy: SeedPolicy;
  text_model_id: string;
  image_model_id: string;
  negative_prompt: string;
  max_parse_retries: number;
}

export interface Project {
  id: string;
  narrative: string;
  style: StyleParameters | null;
  frames: FrameRecord[];
  config: GenerationConfig;
  created_at: number;
  updated_at: number;
}

export interface ApiErrorPayload {
  machine_code: string;
  human_message: string;
  retryable: boolean;
}

export interface ProjectSummary {
  id: string;
  narrative: string;
  frame_count: number;
  updated_at: number;
}

export interface JobState {
  job_id: string;
  status: "running" | "done" | "failed";
  result: { project_id: string; frames: FrameRecord[] } | null;
  error: ApiErrorPayload | null;
}

export type PromptView = "natural" | "parameterized";

export const STYLE_LABELS: ReadonlyArray<[keyof StyleParameters, string]> = [
  ["age", "Age"],
  ["gender", "Gender"],
  ["hair", "Hair"],
  ["clothing", "Clothing"],
  ["scene", "Scene"],
  ["location", "Location"],
  ["color", "Color"],
  ["art_type", "Art type"],
  ["lens_and_shot", "Lens and Shot"],
];

export const SLOT_LABELS: ReadonlyArray<[Exclude<keyof FramePrompt, "natural_language">, string]> = [
  ["general_description", "General description"],
  ["object", "Object"],
  ["person", "Person"],
  ["action", "Action"],
  ["emotion", "Emotion"],
  ["background", "Background"],
  ["style", "Style"],
  ["shot", "Shot"],
];

export function emptyStyle(): StyleParameters {
  return {
    age: "",
    gender: "",
    hair: "",
    clothing: "",
    scene: "",
    location: "",
    color: "",
    art_type: "",
    lens_and_shot: "",
  };
}
