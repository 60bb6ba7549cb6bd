import { describe, expect, it } from "vitest";

import { canSubmit, incompleteSlots, SlotState } from "../src/state.js";

function slot(rating: number | null, playCount: number): SlotState {
  return { token: "t", url: "/audio/t.wav", rating, playCount };
}

describe("submission completeness", () => {
  it("requires every slot rated and played", () => {
    const full = Array.from({ length: 7 }, () => slot(4, 1));
    expect(canSubmit(full)).toBe(true);

    const unrated = [...full.slice(0, 6), slot(null, 2)];
    expect(canSubmit(unrated)).toBe(false);
    expect(incompleteSlots(unrated)).toEqual([6]);

    const unplayed = [slot(7, 0), ...full.slice(1)];
    expect(canSubmit(unplayed)).toBe(false);
    expect(incompleteSlots(unplayed)).toEqual([0]);
  });

  it("rejects empty slot lists", () => {
    expect(canSubmit([])).toBe(false);
  });

  it("counts multiple plays as played", () => {
    expect(canSubmit([slot(1, 3)])).toBe(true);
  });
});
