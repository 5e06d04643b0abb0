// DOM wiring for the rating interface. All state transitions go through the
// pure helpers in draft.ts / view.ts; this file only reads inputs and paints.

import { ApiClient, ItemPayload, SubmitResult } from "./api.js";
import {
  Draft,
  DraftStore,
  clampScore,
  draftErrors,
  emptyDraft,
  isComplete,
  toRatingBody,
} from "./draft.js";
import { navState, questionGroups, scoreSliders } from "./view.js";

const api = new ApiClient("");
const drafts = new DraftStore(window.localStorage);

interface AppState {
  sessionId: string;
  nItems: number;
  index: number;
  item: ItemPayload | null;
  draft: Draft;
  done: Set<number>;
}

let state: AppState | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) {
    throw new Error(`missing element #${id}`);
  }
  return node as T;
}

function setStatus(text: string, isError = false): void {
  const bar = el<HTMLElement>("status");
  bar.textContent = text;
  bar.className = isError ? "status error" : "status";
}

async function startSession(subjectId: string): Promise<void> {
  const info = await api.createSession(subjectId);
  state = {
    sessionId: info.session_id,
    nItems: info.n_items,
    index: 0,
    item: null,
    draft: emptyDraft(),
    done: new Set(),
  };
  el<HTMLElement>("login").hidden = true;
  el<HTMLElement>("rater").hidden = false;
  await showItem(0);
}

async function showItem(index: number): Promise<void> {
  if (!state) {
    return;
  }
  state.index = index;
  setStatus("loading item...");
  try {
    state.item = await api.getItem(state.sessionId, index);
  } catch (err) {
    setStatus(`could not load item ${index + 1}: ${String(err)}`, true);
    return;
  }
  state.draft = drafts.load(state.sessionId, index) ?? emptyDraft();
  renderItem();
  setStatus("");
}

function renderItem(): void {
  if (!state || !state.item) {
    return;
  }
  const item = state.item;
  const nav = navState(state.index, state.nItems);
  el<HTMLElement>("progress").textContent = nav.progress;
  el<HTMLButtonElement>("prev").disabled = !nav.prevEnabled;
  el<HTMLButtonElement>("next").disabled = !nav.nextEnabled;
  el<HTMLElement>("prompt").textContent = item.prompt_text;

  const img = el<HTMLImageElement>("image");
  const imgError = el<HTMLElement>("image-error");
  imgError.hidden = true;
  img.onerror = () => {
    imgError.hidden = false;
  };
  img.src = item.image_url;

  const scoreBox = el<HTMLElement>("scores");
  scoreBox.textContent = "";
  for (const spec of scoreSliders(item)) {
    const row = document.createElement("div");
    row.className = "score-row";
    row.dataset.field = `scores.${spec.id}`;
    const label = document.createElement("label");
    label.textContent = spec.label;
    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = String(spec.min);
    slider.max = String(spec.max);
    slider.step = String(spec.step);
    const readout = document.createElement("span");
    const current = state.draft.scores[spec.id];
    if (typeof current === "number") {
      slider.value = String(current);
      readout.textContent = current.toFixed(1);
    } else {
      slider.value = "2.5";
      readout.textContent = "unset";
    }
    slider.addEventListener("input", () => {
      if (!state) {
        return;
      }
      const v = clampScore(Number(slider.value));
      state.draft.scores[spec.id] = v;
      readout.textContent = v.toFixed(1);
      persistAndRefresh();
    });
    row.append(label, slider, readout);
    scoreBox.append(row);
  }

  const questionBox = el<HTMLElement>("questions");
  questionBox.textContent = "";
  for (const group of questionGroups(item)) {
    const fieldset = document.createElement("fieldset");
    fieldset.dataset.field = `choices.${group.id}`;
    const legend = document.createElement("legend");
    legend.textContent = group.label;
    fieldset.append(legend);
    for (const option of group.options) {
      const label = document.createElement("label");
      label.className = "option";
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = group.id;
      radio.value = option;
      radio.checked = state.draft.choices[group.id] === option;
      radio.addEventListener("change", () => {
        if (!state) {
          return;
        }
        state.draft.choices[group.id] = option;
        persistAndRefresh();
      });
      // option text comes from the server vocabulary, verbatim
      label.append(radio, document.createTextNode(option));
      fieldset.append(label);
    }
    questionBox.append(fieldset);
  }

  const explanation = el<HTMLTextAreaElement>("explanation");
  explanation.value = state.draft.explanation;
  explanation.oninput = () => {
    if (!state) {
      return;
    }
    state.draft.explanation = explanation.value;
    persistAndRefresh();
  };

  refreshSubmit();
}

function persistAndRefresh(): void {
  if (!state) {
    return;
  }
  drafts.save(state.sessionId, state.index, state.draft);
  refreshSubmit();
}

function refreshSubmit(): void {
  if (!state || !state.item) {
    return;
  }
  el<HTMLButtonElement>("submit").disabled = !isComplete(state.draft, state.item);
  clearFieldErrors();
}

function clearFieldErrors(): void {
  for (const node of document.querySelectorAll("[data-field].invalid")) {
    node.classList.remove("invalid");
  }
}

function showFieldErrors(errors: Record<string, string>): void {
  clearFieldErrors();
  const messages: string[] = [];
  for (const [field, message] of Object.entries(errors)) {
    messages.push(`${field}: ${message}`);
    const node = document.querySelector(`[data-field="${field}"]`);
    if (node) {
      node.classList.add("invalid");
    }
  }
  setStatus(messages.join("; "), true);
}

async function submit(): Promise<void> {
  if (!state || !state.item) {
    return;
  }
  const local = draftErrors(state.draft, state.item);
  if (Object.keys(local).length > 0) {
    showFieldErrors(local);
    return;
  }
  let result: SubmitResult;
  try {
    result = await api.submitRating(
      state.sessionId,
      state.index,
      toRatingBody(state.draft),
    );
  } catch (err) {
    // the draft stays in local storage; the user can retry
    setStatus(`submission failed, draft kept: ${String(err)}`, true);
    return;
  }
  if (!result.accepted) {
    showFieldErrors(result.errors);
    return;
  }
  drafts.clear(state.sessionId, state.index);
  state.done.add(state.index);
  setStatus(`item ${state.index + 1} saved`);
  if (state.index < state.nItems - 1) {
    await showItem(state.index + 1);
  }
}

function wire(): void {
  el<HTMLFormElement>("login-form").addEventListener("submit", (event) => {
    event.preventDefault();
    const subject = el<HTMLInputElement>("subject-id").value.trim();
    if (!subject) {
      setStatus("enter a subject id", true);
      return;
    }
    startSession(subject).catch((err) => {
      setStatus(`could not start session: ${String(err)}`, true);
    });
  });
  el<HTMLButtonElement>("prev").addEventListener("click", () => {
    if (state && state.index > 0) {
      void showItem(state.index - 1);
    }
  });
  el<HTMLButtonElement>("next").addEventListener("click", () => {
    if (state && state.index < state.nItems - 1) {
      void showItem(state.index + 1);
    }
  });
  el<HTMLButtonElement>("submit").addEventListener("click", () => {
    void submit();
  });
  el<HTMLButtonElement>("image-retry").addEventListener("click", () => {
    if (state && state.item) {
      el<HTMLElement>("image-error").hidden = true;
      const img = el<HTMLImageElement>("image");
      img.src = `${state.item.image_url}?retry=${Date.now()}`;
    }
  });
}

document.addEventListener("DOMContentLoaded", wire);
