/** DOM builders. Rendering is a pure function of ViewState; inputs are
 * uncontrolled (read at save time), so re-renders happen only on state
 * transitions, never on keystrokes. */

import type { ApiClient } from "./api.js";
import type { ViewState } from "./state.js";
import type { FrameRecord, Project } from "./types.js";
import { SLOT_LABELS, STYLE_LABELS } from "./types.js";

type AttrValue = string | boolean | number;

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, AttrValue> = {},
  children: Array<Node | string> = [],
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [name, value] of Object.entries(attrs)) {
    if (name === "text") {
      node.textContent = String(value);
    } else if (typeof value === "boolean") {
      if (value) {
        node.setAttribute(name, "");
      }
    } else {
      node.setAttribute(name, String(value));
    }
  }
  for (const child of children) {
    node.append(child);
  }
  return node;
}

function button(id: string, label: string, disabled: boolean): HTMLButtonElement {
  return el("button", { id, type: "button", disabled, text: label });
}

function renderBanner(state: ViewState): HTMLElement {
  const banner = el("div", { id: "banner", class: "banner", role: "alert" });
  if (state.banner) {
    banner.classList.add("visible");
    banner.append(
      el("span", { class: "banner-code", text: state.banner.machine_code }),
      el("span", { class: "banner-message", text: state.banner.human_message }),
    );
    if (state.banner.retryable) {
      banner.append(el("span", { class: "banner-retry", text: "(retryable)" }));
    }
    banner.append(el("button", { id: "banner-dismiss", type: "button", text: "Dismiss" }));
  }
  return banner;
}

function renderStoryPanel(state: ViewState): HTMLElement {
  const project = state.project;
  const submitLabel = project ? "Update Story" : "Create Storyboard";
  const textarea = el("textarea", {
    id: "story-input",
    rows: 6,
    placeholder: "Describe the story your storyboard should tell...",
  });
  if (project) {
    textarea.value = project.narrative;
  }
  // Empty story means nothing to submit; an input listener in the app
  // re-enables the button as soon as there is text.
  const disabled = state.panelPending || textarea.value.trim() === "";
  return el("section", { id: "story-panel", class: "panel" }, [
    el("h2", { text: "Story" }),
    textarea,
    button("story-submit", submitLabel, disabled),
  ]);
}

function renderStylePanel(state: ViewState): HTMLElement {
  const project = state.project;
  const panel = el("section", { id: "style-panel", class: "panel" }, [
    el("h2", { text: "Style" }),
  ]);
  if (!project) {
    panel.append(el("p", { class: "hint", text: "Submit a story to get a style." }));
    return panel;
  }
  const style = project.style;
  const grid = el("div", { class: "style-grid" });
  for (const [field, label] of STYLE_LABELS) {
    const input = el("input", {
      type: "text",
      class: "style-input",
      "data-field": field,
      name: field,
    });
    input.value = style ? style[field] : "";
    grid.append(el("label", { class: "style-row" }, [el("span", { text: label }), input]));
  }
  panel.append(grid);
  const busy = state.panelPending;
  panel.append(
    el("div", { class: "button-row" }, [
      button("style-save", "Save Style", busy),
      button("btn-resubmit", "Resubmit", busy),
      button("btn-regenerate-style", "Regenerate Style", busy),
      button("btn-reset", "Reset", busy),
    ]),
  );
  if (busy) {
    panel.append(el("p", { class: "hint pending", text: "Working..." }));
  }
  return panel;
}

function renderFrameEditor(state: ViewState, frame: FrameRecord, busy: boolean): HTMLElement {
  const mode = state.viewModes[frame.index] ?? "natural";
  const editor = el("div", { class: "frame-editor", "data-view": mode });
  if (mode === "natural") {
    const textarea = el("textarea", { class: "nl-input", rows: 3 });
    textarea.value = frame.prompt.natural_language;
    editor.append(textarea);
  } else {
    for (const [slot, label] of SLOT_LABELS) {
      const input = el("input", {
        type: "text",
        class: "slot-input",
        "data-slot": slot,
        name: slot,
      });
      input.value = frame.prompt[slot];
      editor.append(el("label", { class: "slot-row" }, [el("span", { text: label }), input]));
    }
  }
  editor.append(
    el("div", { class: "button-row" }, [
      el("button", { class: "btn-save", type: "button", disabled: busy, text: "Save" }),
      el("button", { class: "btn-save-render", type: "button", disabled: busy, text: "Save + Render" }),
    ]),
  );
  return editor;
}

function renderFrameCard(state: ViewState, client: ApiClient, project: Project, frame: FrameRecord): HTMLElement {
  const busy = state.framePending[frame.index] === true;
  const mode = state.viewModes[frame.index] ?? "natural";
  const card = el("article", {
    class: "frame-card" + (busy ? " pending" : ""),
    "data-index": frame.index,
  });
  card.append(
    el("header", {}, [
      el("span", { class: "frame-number", text: `Frame ${frame.index + 1}` }),
      el("span", { class: `badge badge-${frame.status}`, text: frame.status }),
    ]),
  );
  if (busy) {
    card.append(el("div", { class: "spinner", role: "status", text: "rendering..." }));
  }
  if (frame.image_ref) {
    card.append(
      el("img", {
        class: "frame-image",
        src: client.frameImageUrl(project.id, frame.index, frame.image_ref),
        alt: `frame ${frame.index + 1}`,
        "data-ref": frame.image_ref,
      }),
    );
  } else {
    card.append(el("div", { class: "frame-placeholder", text: "not rendered" }));
  }
  card.append(el("p", { class: "caption", text: frame.prompt.natural_language }));
  if (frame.error) {
    card.append(el("p", { class: "frame-error", text: frame.error }));
  }
  card.append(
    el("div", { class: "button-row" }, [
      el("button", {
        class: "btn-toggle",
        type: "button",
        disabled: busy,
        text: mode === "natural" ? "Parameterized view" : "Natural view",
      }),
      el("button", { class: "btn-regen", type: "button", disabled: busy, text: "Regenerate" }),
    ]),
  );
  card.append(renderFrameEditor(state, frame, busy));
  return card;
}

function renderFrameGrid(state: ViewState, client: ApiClient): HTMLElement {
  const grid = el("section", { id: "frame-grid", class: "grid" });
  if (!state.project) {
    return grid;
  }
  for (const frame of state.project.frames) {
    grid.append(renderFrameCard(state, client, state.project, frame));
  }
  return grid;
}

function renderExportPanel(state: ViewState): HTMLElement {
  const panel = el("section", { id: "export-panel", class: "panel" }, [
    el("h2", { text: "Export" }),
  ]);
  const project = state.project;
  if (!project) {
    return panel;
  }
  for (const format of ["png", "html", "json"]) {
    const box = el("input", {
      type: "checkbox",
      class: "export-format",
      value: format,
    });
    box.checked = format === "png";
    panel.append(el("label", { class: "export-row" }, [box, el("span", { text: format })]));
  }
  // Stale frames still carry an image and export fine; only frames with
  // no image at all come out as placeholders.
  const missing = project.frames.filter((frame) => !frame.image_ref);
  const nothingRendered = missing.length === project.frames.length;
  panel.append(button("btn-export", "Export", nothingRendered || state.panelPending));
  const hint = el("p", { id: "export-hint", class: "hint" });
  if (nothingRendered) {
    hint.textContent = "Nothing rendered yet; Resubmit first.";
  } else if (missing.length > 0) {
    const numbers = missing.map((frame) => frame.index + 1).join(", ");
    hint.textContent = `Warning: frames ${numbers} are not rendered and will export as placeholders.`;
  }
  panel.append(hint);
  return panel;
}

export function render(root: HTMLElement, state: ViewState, client: ApiClient): void {
  root.textContent = "";
  root.append(
    renderBanner(state),
    el("div", { class: "columns" }, [
      renderStoryPanel(state),
      el("div", { class: "main-column" }, [
        renderStylePanel(state),
        renderFrameGrid(state, client),
        renderExportPanel(state),
      ]),
    ]),
  );
}

export function readStyleInputs(root: HTMLElement): Record<string, string> {
  const style: Record<string, string> = {};
  for (const input of root.querySelectorAll<HTMLInputElement>(".style-input")) {
    style[input.dataset.field as string] = input.value;
  }
  return style;
}

export function readSlotInputs(card: HTMLElement): Record<string, string> {
  const slots: Record<string, string> = {};
  for (const input of card.querySelectorAll<HTMLInputElement>(".slot-input")) {
    slots[input.dataset.slot as string] = input.value;
  }
  return slots;
}
