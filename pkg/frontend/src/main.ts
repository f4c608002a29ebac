import { ApiClient, ApiError, CompletionFailed } from "./api";
import { mount } from "./dom";
import {
  canSubmit,
  initialState,
  SessionState,
  setCompany,
  setDraft,
  setPreset,
  submitFailed,
  submitStarted,
  submitSucceeded,
  uploadFailed,
  uploadSucceeded,
} from "./state";
import type { Preset } from "./types";
import { renderApp } from "./view";

const api = new ApiClient("");
let state: SessionState = initialState();
let container: HTMLElement;

function redraw(): void {
  mount(container, renderApp(state));
  bind();
}

function update(next: SessionState): void {
  state = next;
  redraw();
}

async function submit(): Promise<void> {
  if (!canSubmit(state)) return;
  const query = state.draft.trim();
  update(submitStarted(state));
  try {
    const answer = await api.submitQuery(state.company, query, state.preset);
    update(submitSucceeded(state, query, answer));
  } catch (err) {
    if (err instanceof CompletionFailed) {
      update(submitFailed(state, `answering failed (${err.body.message}); retrieval succeeded`));
    } else if (err instanceof ApiError) {
      update(submitFailed(state, err.body.message));
    } else {
      update(submitFailed(state, "network failure, try again"));
    }
  }
}

async function upload(file: File): Promise<void> {
  try {
    const result = await api.uploadDocument(state.company, await file.text());
    update(uploadSucceeded(state, result));
  } catch (err) {
    const message =
      err instanceof ApiError ? `${err.body.message} ${err.body.detail ?? ""}`.trim() : "network failure";
    update(uploadFailed(state, message));
  }
}

function bind(): void {
  const input = container.querySelector<HTMLInputElement>("input[data-action=draft]");
  input?.addEventListener("input", () => {
    state = setDraft(state, input.value); // no redraw; keep focus while typing
    const button = container.querySelector<HTMLButtonElement>("button[data-action=submit]");
    if (button) button.disabled = !canSubmit(state);
  });
  container
    .querySelector("form.query-form")
    ?.addEventListener("submit", (event) => {
      event.preventDefault();
      void submit();
    });
  container
    .querySelector<HTMLButtonElement>("button[data-action=retry]")
    ?.addEventListener("click", () => void submit());
  const company = container.querySelector<HTMLInputElement>("input.company-input");
  company?.addEventListener("change", () => {
    state = setCompany(state, company.value);
  });
  const preset = container.querySelector<HTMLSelectElement>("select[data-action=preset]");
  preset?.addEventListener("change", () => {
    state = setPreset(state, preset.value as Preset);
  });
  const picker = container.querySelector<HTMLInputElement>("input[data-action=upload]");
  picker?.addEventListener("change", () => {
    const file = picker.files?.[0];
    if (file) void upload(file);
  });
}

export function start(root: HTMLElement): void {
  container = root;
  redraw();
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) start(root);
}
