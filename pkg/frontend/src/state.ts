/** Client-local view state around the server's project snapshot.
 *
 * The project itself always comes from an API response; this store only
 * adds what the server cannot know: which prompt view each frame shows,
 * which operations are in flight, and the last error banner. View
 * toggles persist across refreshes via localStorage.
 */

import type { ApiErrorPayload, Project, PromptView } from "./types.js";

export interface ViewState {
  project: Project | null;
  viewModes: Record<number, PromptView>;
  panelPending: boolean;
  framePending: Record<number, boolean>;
  banner: ApiErrorPayload | null;
}

export type Listener = (state: ViewState) => void;

const STORAGE_PREFIX = "storyboard.viewmodes.";

function loadViewModes(projectId: string): Record<number, PromptView> {
  try {
    const raw = globalThis.localStorage?.getItem(STORAGE_PREFIX + projectId);
    if (!raw) {
      return {};
    }
    const parsed = JSON.parse(raw) as Record<string, PromptView>;
    const modes: Record<number, PromptView> = {};
    for (const [key, value] of Object.entries(parsed)) {
      if (value === "natural" || value === "parameterized") {
        modes[Number(key)] = value;
      }
    }
    return modes;
  } catch {
    return {};
  }
}

function saveViewModes(projectId: string, modes: Record<number, PromptView>): void {
  try {
    globalThis.localStorage?.setItem(STORAGE_PREFIX + projectId, JSON.stringify(modes));
  } catch {
    // Storage may be unavailable (private mode); toggles just won't persist.
  }
}

export class Store {
  private state: ViewState = {
    project: null,
    viewModes: {},
    panelPending: false,
    framePending: {},
    banner: null,
  };
  private listeners: Listener[] = [];

  get(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((entry) => entry !== listener);
    };
  }

  private emit(): void {
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }

  /** Replace the snapshot with a fresh API response. */
  setProject(project: Project): void {
    const switched = this.state.project?.id !== project.id;
    this.state = {
      ...this.state,
      project,
      viewModes: switched ? loadViewModes(project.id) : this.state.viewModes,
      banner: null,
    };
    this.emit();
  }

  viewMode(index: number): PromptView {
    return this.state.viewModes[index] ?? "natural";
  }

  toggleView(index: number): PromptView {
    const next: PromptView = this.viewMode(index) === "natural" ? "parameterized" : "natural";
    this.state = {
      ...this.state,
      viewModes: { ...this.state.viewModes, [index]: next },
    };
    if (this.state.project) {
      saveViewModes(this.state.project.id, this.state.viewModes);
    }
    this.emit();
    return next;
  }

  setPanelPending(pending: boolean): void {
    this.state = { ...this.state, panelPending: pending };
    this.emit();
  }

  setFramePending(index: number, pending: boolean): void {
    this.state = {
      ...this.state,
      framePending: { ...this.state.framePending, [index]: pending },
    };
    this.emit();
  }

  isFramePending(index: number): boolean {
    return this.state.framePending[index] === true;
  }

  setBanner(banner: ApiErrorPayload | null): void {
    this.state = { ...this.state, banner };
    this.emit();
  }
}
