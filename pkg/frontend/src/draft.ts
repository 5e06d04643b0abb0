// Local draft state: validation mirrors the server rules so the submit
// button can stay disabled until a POST would succeed, and unsent drafts
// survive a page reload through a pluggable key-value store.

import type { ItemPayload, RatingBody } from "./api.js";

export interface Draft {
  scores: Record<string, number>;
  choices: Record<string, string>;
  explanation: string;
}

export function emptyDraft(): Draft {
  return { scores: {}, choices: {}, explanation: "" };
}

// Scores are entered on a 0-5 slider with 0.1 granularity.
export function clampScore(value: number): number {
  const bounded = Math.min(5, Math.max(0, value));
  return Math.round(bounded * 10) / 10;
}

export function draftErrors(draft: Draft, item: ItemPayload): Record<string, string> {
  const errors: Record<string, string> = {};
  for (const persp of item.perspectives) {
    const v = draft.scores[persp];
    if (typeof v !== "number" || Number.isNaN(v)) {
      errors[`scores.${persp}`] = "required";
    } else if (v < 0 || v > 5) {
      errors[`scores.${persp}`] = "out of [0,5]";
    }
  }
  for (const q of item.questions) {
    const choice = draft.choices[q.id];
    if (choice === undefined) {
      errors[`choices.${q.id}`] = "required";
    } else if (!q.options.includes(choice)) {
      errors[`choices.${q.id}`] = "not one of the listed options";
    }
  }
  return errors;
}

export function isComplete(draft: Draft, item: ItemPayload): boolean {
  return Object.keys(draftErrors(draft, item)).length === 0;
}

export function toRatingBody(draft: Draft): RatingBody {
  return {
    scores: { ...draft.scores },
    choices: { ...draft.choices },
    explanation: draft.explanation,
  };
}

// Minimal subset of the Web Storage interface, so tests can swap in a map.
export interface KeyValueStore {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class MemoryStore implements KeyValueStore {
  private map = new Map<string, string>();
  getItem(key: string): string | null {
    return this.map.has(key) ? this.map.get(key)! : null;
  }
  setItem(key: string, value: string): void {
    this.map.set(key, value);
  }
  removeItem(key: string): void {
    this.map.delete(key);
  }
}

export class DraftStore {
  constructor(private store: KeyValueStore, private prefix = "mintiqa.draft") {}

  private key(sessionId: string, index: number): string {
    return `${this.prefix}.${sessionId}.${index}`;
  }

  load(sessionId: string, index: number): Draft | null {
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
    } catch {
      return null; // a corrupt draft is treated as absent
    }
  }

  save(sessionId: string, index: number, draft: Draft): void {
    this.store.setItem(this.key(sessionId, index), JSON.stringify(draft));
  }

  clear(sessionId: string, index: number): void {
    this.store.removeItem(this.key(sessionId, index));
  }
}
