import { describe, expect, it } from "vitest";

import type { ItemPayload } from "../src/api.js";
import {
  DraftStore,
  MemoryStore,
  clampScore,
  draftErrors,
  emptyDraft,
  isComplete,
} from "../src/draft.js";

const ITEM: ItemPayload = {
  image_id: "img000",
  image_url: "/images/images/img000.png",
  prompt_text: "a painting",
  perspectives: ["quality", "authenticity", "correspondence"],
  questions: [
    { id: "clarity", text: "q1", options: ["low", "high"] },
    { id: "outline", text: "q2", options: ["rough", "sharp"] },
  ],
  index: 0,
  n_items: 2,
};

describe("clampScore", () => {
  it("rounds to 0.1 granularity", () => {
    expect(clampScore(3.14)).toBe(3.1);
    expect(clampScore(3.15)).toBe(3.2);
    expect(clampScore(0.04)).toBe(0);
  });

  it("clamps to [0, 5]", () => {
    expect(clampScore(-1)).toBe(0);
    expect(clampScore(5.1)).toBe(5);
    expect(clampScore(5)).toBe(5);
  });
});

describe("draft validation", () => {
  it("flags every missing field with its API name", () => {
    const errors = draftErrors(emptyDraft(), ITEM);
    expect(Object.keys(errors).sort()).toEqual([
      "choices.clarity",
      "choices.outline",
      "scores.authenticity",
      "scores.correspondence",
      "scores.quality",
    ]);
  });

  it("flags out-of-range scores and off-list choices", () => {
    const draft = emptyDraft();
    draft.scores = { quality: 6, authenticity: 2, correspondence: 2 };
    draft.choices = { clarity: "nope", outline: "sharp" };
    const errors = draftErrors(draft, ITEM);
    expect(errors["scores.quality"]).toBeDefined();
    expect(errors["choices.clarity"]).toBeDefined();
    expect(errors["choices.outline"]).toBeUndefined();
  });

  it("becomes complete exactly when all scores and choices are set", () => {
    const draft = emptyDraft();
    draft.scores = { quality: 1, authenticity: 2, correspondence: 3 };
    draft.choices = { clarity: "low" };
    expect(isComplete(draft, ITEM)).toBe(false);
    draft.choices.outline = "sharp";
    expect(isComplete(draft, ITEM)).toBe(true); // explanation stays optional
  });
});

describe("draft persistence", () => {
  it("round-trips through the store, simulating a page reload", () => {
    const backing = new MemoryStore();
    const drafts = new DraftStore(backing);
    const draft = emptyDraft();
    draft.scores.quality = 2.5;
    draft.choices.clarity = "high";
    draft.explanation = "washed out";
    drafts.save("s000001", 3, draft);

    // a fresh DraftStore over the same backing store is what a reload sees
    const restored = new DraftStore(backing).load("s000001", 3);
    expect(restored).toEqual(draft);
  });

  it("keeps drafts separate per session and item", () => {
    const drafts = new DraftStore(new MemoryStore());
    const a = emptyDraft();
    a.explanation = "a";
    drafts.save("s1", 0, a);
    expect(drafts.load("s1", 1)).toBeNull();
    expect(drafts.load("s2", 0)).toBeNull();
    expect(drafts.load("s1", 0)?.explanation).toBe("a");
  });

  it("clears a draft after submission", () => {
    const drafts = new DraftStore(new MemoryStore());
    drafts.save("s1", 0, emptyDraft());
    drafts.clear("s1", 0);
    expect(drafts.load("s1", 0)).toBeNull();
  });

  it("treats corrupt stored JSON as absent", () => {
    const backing = new MemoryStore();
    backing.setItem("mintiqa.draft.s1.0", "{not json");
    expect(new DraftStore(backing).load("s1", 0)).toBeNull();
  });
});
