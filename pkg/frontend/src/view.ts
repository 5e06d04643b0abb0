// Pure view-model helpers, kept free of DOM access so they can be unit
// tested in node. The DOM layer in app.ts only arranges what these return.

import type { ItemPayload } from "./api.js";

export interface SliderSpec {
  id: string;
  label: string;
  min: number;
  max: number;
  step: number;
}

export interface RadioGroup {
  id: string;
  label: string;
  options: string[]; // server vocabulary, verbatim and in server order
}

export interface NavState {
  prevEnabled: boolean;
  nextEnabled: boolean;
  progress: string;
}

export function scoreSliders(item: ItemPayload): SliderSpec[] {
  return item.perspectives.map((persp) => ({
    id: persp,
    label: persp,
    min: 0,
    max: 5,
    step: 0.1,
  }));
}

export function questionGroups(item: ItemPayload): RadioGroup[] {
  return item.questions.map((q) => ({
    id: q.id,
    label: q.text,
    options: q.options.slice(),
  }));
}

export function navState(index: number, nItems: number): NavState {
  return {
    prevEnabled: index > 0,
    nextEnabled: index < nItems - 1,
    progress: `${index + 1} / ${nItems}`,
  };
}
