/** Wires the store, the renderer, and the API client together.
 *
 * Every state change starts from an API response; handlers never mutate
 * prompts or statuses locally. Per-frame operations disable only their
 * own card, so other frames stay editable while one renders.
 */

import { ApiClient, ApiError } from "./api.js";
import { readSlotInputs, readStyleInputs, render } from "./render.js";
import { Store } from "./state.js";
import type { FramePrompt, StyleParameters } from "./types.js";

export interface AppOptions {
  /** Called with the export archive; the default saves it via an anchor. */
  download?: (blob: Blob, filename: string) => void;
  /** Confirmation hook for destructive actions; defaults to window.confirm. */
  confirm?: (message: string) => boolean;
  /** Async-job poll interval in milliseconds. */
  pollIntervalMs?: number;
}

export interface App {
  store: Store;
  client: ApiClient;
  root: HTMLElement;
}

function defaultDownload(blob: Blob, filename: string): void {
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = filename;
  document.body.append(anchor);
  anchor.click();
  anchor.remove();
  URL.revokeObjectURL(url);
}

function bannerFor(err: unknown) {
  if (err instanceof ApiError) {
    return err.payload;
  }
  return {
    machine_code: "client-error",
    human_message: err instanceof Error ? err.message : String(err),
    retryable: false,
  };
}

export function mount(root: HTMLElement, client: ApiClient, options: AppOptions = {}): App {
  const store = new Store();
  const download = options.download ?? defaultDownload;
  const confirmDialog = options.confirm ?? ((message: string) => globalThis.confirm(message));
  const pollIntervalMs = options.pollIntervalMs ?? 1000;

  store.subscribe((state) => render(root, state, client));
  render(root, store.get(), client);

  async function withPanel(operation: () => Promise<void>): Promise<void> {
    store.setPanelPending(true);
    try {
      await operation();
    } catch (err) {
      store.setBanner(bannerFor(err));
    } finally {
      store.setPanelPending(false);
    }
  }

  async function withFrame(index: number, operation: () => Promise<void>): Promise<void> {
    store.setFramePending(index, true);
    try {
      await operation();
    } catch (err) {
      store.setBanner(bannerFor(err));
    } finally {
      store.setFramePending(index, false);
    }
  }

  async function submitStory(): Promise<void> {
    const textarea = root.querySelector<HTMLTextAreaElement>("#story-input");
    const narrative = textarea?.value.trim() ?? "";
    if (!narrative) {
      return;
    }
    await withPanel(async () => {
      const existing = store.get().project;
      if (existing) {
        const response = await client.putStory(existing.id, narrative);
        store.setProject(response.project);
        return;
      }
      const created = await client.createProject(narrative);
      store.setProject(created.project);
      const styled = await client.generateStyle(created.project.id);
      store.setProject(styled.project);
    });
  }

  async function saveStyle(): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    const style = readStyleInputs(root) as unknown as StyleParameters;
    await withPanel(async () => {
      const response = await client.putStyle(project.id, style);
      store.setProject(response.project);
    });
  }

  async function resubmit(): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    await withPanel(async () => {
      const job = await client.startResubmitJob(project.id);
      await client.pollJob(job.job_id, pollIntervalMs);
      const response = await client.getProject(project.id);
      store.setProject(response.project);
    });
  }

  async function regenerateStyle(): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    if (!confirmDialog("Regenerating the style marks every frame stale. Continue?")) {
      return;
    }
    await withPanel(async () => {
      const response = await client.regenerateStyle(project.id);
      store.setProject(response.project);
    });
  }

  async function resetStyle(): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    await withPanel(async () => {
      const response = await client.resetStyle(project.id);
      store.setProject(response.project);
    });
  }

  async function saveFrame(index: number, renderAfter: boolean): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    const card = root.querySelector<HTMLElement>(`.frame-card[data-index="${index}"]`);
    if (!card) {
      return;
    }
    const mode = store.viewMode(index);
    await withFrame(index, async () => {
      let response;
      if (mode === "natural") {
        const text = card.querySelector<HTMLTextAreaElement>(".nl-input")?.value ?? "";
        response = await client.putFramePrompt(project.id, index, "natural", text, renderAfter);
      } else {
        const slots = readSlotInputs(card) as Partial<FramePrompt>;
        response = await client.putFramePrompt(project.id, index, "parameterized", slots, renderAfter);
      }
      store.setProject(response.project);
    });
  }

  async function regenerateFrame(index: number): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    await withFrame(index, async () => {
      const response = await client.regenerateFrame(project.id, index);
      store.setProject(response.project);
    });
  }

  async function exportBundle(): Promise<void> {
    const project = store.get().project;
    if (!project) {
      return;
    }
    const formats = Array.from(
      root.querySelectorAll<HTMLInputElement>(".export-format:checked"),
      (box) => box.value,
    );
    if (formats.length === 0) {
      store.setBanner({
        machine_code: "client-error",
        human_message: "pick at least one export format",
        retryable: false,
      });
      return;
    }
    await withPanel(async () => {
      const blob = await client.downloadExport(project.id, formats);
      download(blob, `storyboard-${project.id}.zip`);
    });
  }

  root.addEventListener("input", (event) => {
    const target = event.target as HTMLElement;
    if (target.id === "story-input") {
      const submit = root.querySelector<HTMLButtonElement>("#story-submit");
      if (submit) {
        const empty = (target as HTMLTextAreaElement).value.trim() === "";
        submit.disabled = empty || store.get().panelPending;
      }
    }
  });

  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (!(target instanceof HTMLButtonElement)) {
      return;
    }
    switch (target.id) {
      case "story-submit":
        void submitStory();
        return;
      case "style-save":
        void saveStyle();
        return;
      case "btn-resubmit":
        void resubmit();
        return;
      case "btn-regenerate-style":
        void regenerateStyle();
        return;
      case "btn-reset":
        void resetStyle();
        return;
      case "btn-export":
        void exportBundle();
        return;
      case "banner-dismiss":
        store.setBanner(null);
        return;
    }
    const card = target.closest<HTMLElement>(".frame-card");
    if (!card) {
      return;
    }
    const index = Number(card.dataset.index);
    if (target.classList.contains("btn-toggle")) {
      store.toggleView(index);
    } else if (target.classList.contains("btn-regen")) {
      void regenerateFrame(index);
    } else if (target.classList.contains("btn-save")) {
      void saveFrame(index, false);
    } else if (target.classList.contains("btn-save-render")) {
      void saveFrame(index, true);
    }
  });

  return { store, client, root };
}

export function bootstrap(): App | null {
  const root = document.getElementById("app");
  if (!root) {
    return null;
  }
  const base = (globalThis as { STORYBOARD_API_BASE?: string }).STORYBOARD_API_BASE ?? "";
  return mount(root, new ApiClient(base));
}
