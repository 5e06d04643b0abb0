// Local draft state: validation mirrors the server rules so the submit
// button can stay disabled until a POST would succeed, and unsent drafts
// survive a page reload through a pluggable key-value store.
export function emptyDraft() {
    return { scores: {}, choices: {}, explanation: "" };
}
// Scores are entered on a 0-5 slider with 0.1 granularity.
export function clampScore(value) {
    const bounded = Math.min(5, Math.max(0, value));
    return Math.round(bounded * 10) / 10;
}
export function draftErrors(draft, item) {
    const errors = {};
    for (const persp of item.perspectives) {
        const v = draft.scores[persp];
        if (typeof v !== "number" || Number.isNaN(v)) {
            errors[`scores.${persp}`] = "required";
        }
        else if (v < 0 || v > 5) {
            errors[`scores.${persp}`] = "out of [0,5]";
        }
    }
    for (const q of item.questions) {
        const choice = draft.choices[q.id];
        if (choice === undefined) {
            errors[`choices.${q.id}`] = "required";
        }
        else if (!q.options.includes(choice)) {
            errors[`choices.${q.id}`] = "not one of the listed options";
        }
    }
    return errors;
}
export function isComplete(draft, item) {
    return Object.keys(draftErrors(draft, item)).length === 0;
}
export function toRatingBody(draft) {
    return {
        scores: { ...draft.scores },
        choices: { ...draft.choices },
        explanation: draft.explanation,
    };
}
export class MemoryStore {
    constructor() {
        this.map = new Map();
    }
    getItem(key) {
        return this.map.has(key) ? this.map.get(key) : null;
    }
    setItem(key, value) {
        this.map.set(key, value);
    }
    removeItem(key) {
        this.map.delete(key);
    }
}
export class DraftStore {
    constructor(store, prefix = "mintiqa.draft") {
        this.store = store;
        this.prefix = prefix;
    }
    key(sessionId, index) {
        return `${this.prefix}.${sessionId}.${index}`;
    }
    load(sessionId, index) {
        const raw = this.store.getItem(this.key(sessionId, index));
        if (raw === null) {
            return null;
        }
        try {
            const parsed = JSON.parse(raw);
            return {
                scores: parsed.scores ?? {},
                choices: parsed.choices ?? {},
                explanation: typeof parsed.explanation === "string" ? parsed.explanation : "",
            };
        }
        catch {
            return null; // a corrupt draft is treated as absent
        }
    }
    save(sessionId, index, draft) {
        this.store.setItem(this.key(sessionId, index), JSON.stringify(draft));
    }
    clear(sessionId, index) {
        this.store.removeItem(this.key(sessionId, index));
    }
}
