// DOM wiring for the rating interface. All state transitions go through the
// pure helpers in draft.ts / view.ts; this file only reads inputs and paints.
import { ApiClient } from "./api.js";
import { DraftStore, clampScore, draftErrors, emptyDraft, isComplete, toRatingBody, } from "./draft.js";
import { navState, questionGroups, scoreSliders } from "./view.js";
const api = new ApiClient("");
const drafts = new DraftStore(window.localStorage);
let state = null;
function el(id) {
    const node = document.getElementById(id);
    if (!node) {
        throw new Error(`missing element #${id}`);
    }
    return node;
}
function setStatus(text, isError = false) {
    const bar = el("status");
    bar.textContent = text;
    bar.className = isError ? "status error" : "status";
}
async function startSession(subjectId) {
    const info = await api.createSession(subjectId);
    state = {
        sessionId: info.session_id,
        nItems: info.n_items,
        index: 0,
        item: null,
        draft: emptyDraft(),
        done: new Set(),
    };
    el("login").hidden = true;
    el("rater").hidden = false;
    await showItem(0);
}
async function showItem(index) {
    if (!state) {
        return;
    }
    state.index = index;
    setStatus("loading item...");
    try {
        state.item = await api.getItem(state.sessionId, index);
    }
    catch (err) {
        setStatus(`could not load item ${index + 1}: ${String(err)}`, true);
        return;
    }
    state.draft = drafts.load(state.sessionId, index) ?? emptyDraft();
    renderItem();
    setStatus("");
}
function renderItem() {
    if (!state || !state.item) {
        return;
    }
    const item = state.item;
    const nav = navState(state.index, state.nItems);
    el("progress").textContent = nav.progress;
    el("prev").disabled = !nav.prevEnabled;
    el("next").disabled = !nav.nextEnabled;
    el("prompt").textContent = item.prompt_text;
    const img = el("image");
    const imgError = el("image-error");
    imgError.hidden = true;
    img.onerror = () => {
        imgError.hidden = false;
    };
    img.src = item.image_url;
    const scoreBox = el("scores");
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
        }
        else {
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
    const questionBox = el("questions");
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
    const explanation = el("explanation");
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
function persistAndRefresh() {
    if (!state) {
        return;
    }
    drafts.save(state.sessionId, state.index, state.draft);
    refreshSubmit();
}
function refreshSubmit() {
    if (!state || !state.item) {
        return;
    }
    el("submit").disabled = !isComplete(state.draft, state.item);
    clearFieldErrors();
}
function clearFieldErrors() {
    for (const node of document.querySelectorAll("[data-field].invalid")) {
        node.classList.remove("invalid");
    }
}
function showFieldErrors(errors) {
    clearFieldErrors();
    const messages = [];
    for (const [field, message] of Object.entries(errors)) {
        messages.push(`${field}: ${message}`);
        const node = document.querySelector(`[data-field="${field}"]`);
        if (node) {
            node.classList.add("invalid");
        }
    }
    setStatus(messages.join("; "), true);
}
async function submit() {
    if (!state || !state.item) {
        return;
    }
    const local = draftErrors(state.draft, state.item);
    if (Object.keys(local).length > 0) {
        showFieldErrors(local);
        return;
    }
    let result;
    try {
        result = await api.submitRating(state.sessionId, state.index, toRatingBody(state.draft));
    }
    catch (err) {
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
function wire() {
    el("login-form").addEventListener("submit", (event) => {
        event.preventDefault();
        const subject = el("subject-id").value.trim();
        if (!subject) {
            setStatus("enter a subject id", true);
            return;
        }
        startSession(subject).catch((err) => {
            setStatus(`could not start session: ${String(err)}`, true);
        });
    });
    el("prev").addEventListener("click", () => {
        if (state && state.index > 0) {
            void showItem(state.index - 1);
        }
    });
    el("next").addEventListener("click", () => {
        if (state && state.index < state.nItems - 1) {
            void showItem(state.index + 1);
        }
    });
    el("submit").addEventListener("click", () => {
        void submit();
    });
    el("image-retry").addEventListener("click", () => {
        if (state && state.item) {
            el("image-error").hidden = true;
            const img = el("image");
            img.src = `${state.item.image_url}?retry=${Date.now()}`;
        }
    });
}
document.addEventListener("DOMContentLoaded", wire);
