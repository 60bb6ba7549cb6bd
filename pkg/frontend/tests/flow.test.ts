// Component tests against the mock service: the full participant flow,
// the completeness rules, and end-to-end blindness of the DOM.

import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { ListeningTestApp } from "../src/ui.js";
import { FakePlayer, MockService } from "./mock_service.js";

const SECRETS = ["wavenet-baseline", "cochlear-n40", "deepfeat-a123",
                 "unprocessed", "waveform-l1", "anchor-high-cond", "anchor-low-cond"];

function setup(nTrials = 3, failScreening = false) {
  const mock = new MockService({ nTrials, secretConditions: SECRETS });
  mock.failScreening = failScreening;
  const players: FakePlayer[] = [];
  const factory = (url: string) => {
    const p = new FakePlayer(url);
    players.push(p);
    return p;
  };
  document.body.innerHTML = '<div id="app"></div>';
  const root = document.getElementById("app") as HTMLElement;
  const app = new ListeningTestApp(
    root, new ApiClient("", mock.fetch), factory, "exp-mock");
  return { mock, app, root, players };
}

function click(el: Element | null): void {
  if (!el) throw new Error("missing element");
  (el as HTMLElement).click();
}

async function settle(): Promise<void> {
  // let chained promises from click handlers resolve
  for (let i = 0; i < 8; i++) await Promise.resolve();
}

async function completeScreening(root: HTMLElement): Promise<void> {
  const rows = root.querySelectorAll(".screening-trial");
  expect(rows.length).toBe(6);
  rows.forEach((row) => click(row.querySelectorAll(".tone-choice")[0]));
  const submit = root.querySelector(".submit-screening") as HTMLButtonElement;
  expect(submit.disabled).toBe(false);
  click(submit);
  await settle();
}

async function rateCurrentTrial(root: HTMLElement, rating = 5): Promise<void> {
  const slots = root.querySelectorAll(".slot");
  expect(slots.length).toBe(7);
  for (const slot of slots) {
    click(slot.querySelector(".play"));
    await settle();
    click(slot.querySelectorAll(".rating")[rating - 1]);
  }
  const submit = root.querySelector(".submit-trial") as HTMLButtonElement;
  expect(submit.disabled).toBe(false);
  click(submit);
  await settle();
}

describe("participant flow", () => {
  beforeEach(() => {
    document.body.innerHTML = "";
  });

  it("completes screening, three trials of seven ratings, then finishes", async () => {
    const { mock, app, root } = setup(3);
    await app.start();
    await completeScreening(root);
    expect(mock.submittedScreenings.length).toBe(1);

    for (let t = 0; t < 3; t++) {
      expect(root.querySelector(".trial")).toBeTruthy();
      await rateCurrentTrial(root, 1 + (t * 2) % 7);
    }
    expect(root.querySelector(".done")).toBeTruthy();
    expect(root.textContent).toContain("rated all 3 trials");
    expect(mock.submittedRatings.size).toBe(3);
    for (const ratings of mock.submittedRatings.values()) {
      expect(ratings.length).toBe(7);
      for (const r of ratings) {
        expect(r.play_count).toBeGreaterThanOrEqual(1);
        expect(r.rating).toBeGreaterThanOrEqual(1);
        expect(r.rating).toBeLessThanOrEqual(7);
      }
    }
  });

  it("keeps submit disabled while any slot is unrated", async () => {
    const { app, root, mock } = setup(1);
    await app.start();
    await completeScreening(root);

    const slots = Array.from(root.querySelectorAll(".slot"));
    for (const slot of slots) {
      click(slot.querySelector(".play"));
      await settle();
    }
    // rate only six of seven
    for (const slot of slots.slice(0, 6)) {
      click(slot.querySelectorAll(".rating")[3]);
    }
    const submit = root.querySelector(".submit-trial") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
    click(submit); // must be a no-op
    await settle();
    expect(mock.submittedRatings.size).toBe(0);
    expect(slots[6].classList.contains("incomplete")).toBe(true);

    click(slots[6].querySelectorAll(".rating")[0]);
    expect((root.querySelector(".submit-trial") as HTMLButtonElement).disabled).toBe(false);
  });

  it("keeps submit disabled while any slot is unplayed", async () => {
    const { app, root, mock } = setup(1);
    await app.start();
    await completeScreening(root);

    const slots = Array.from(root.querySelectorAll(".slot"));
    for (const slot of slots) {
      click(slot.querySelectorAll(".rating")[6]);
    }
    // play all but the third clip
    for (const [i, slot] of slots.entries()) {
      if (i === 2) continue;
      click(slot.querySelector(".play"));
      await settle();
    }
    const submit = root.querySelector(".submit-trial") as HTMLButtonElement;
    expect(submit.disabled).toBe(true);
    expect(slots[2].classList.contains("incomplete")).toBe(true);
    click(submit);
    await settle();
    expect(mock.submittedRatings.size).toBe(0);

    click(slots[2].querySelector(".play"));
    await settle();
    expect((root.querySelector(".submit-trial") as HTMLButtonElement).disabled).toBe(false);
  });

  it("never exposes condition metadata in the rendered DOM", async () => {
    const { app, root } = setup(2);
    await app.start();
    await completeScreening(root);

    const seen: string[] = [];
    for (let t = 0; t < 2; t++) {
      seen.push(document.body.innerHTML);
      await rateCurrentTrial(root);
    }
    seen.push(document.body.innerHTML);
    for (const html of seen) {
      for (const secret of SECRETS) {
        expect(html).not.toContain(secret);
      }
      expect(html).not.toContain("__anchor");
    }
  });

  it("blocks the experiment when screening fails", async () => {
    const { app, root, mock } = setup(1, true);
    await app.start();
    await completeScreening(root);
    expect(root.querySelector(".blocked")).toBeTruthy();
    expect(root.querySelector(".trial")).toBeNull();
    expect(mock.submittedRatings.size).toBe(0);
  });

  it("submits the screening answers exactly once", async () => {
    const { app, root, mock } = setup(1);
    await app.start();
    await completeScreening(root);
    expect(mock.submittedScreenings.length).toBe(1);
    expect(mock.submittedScreenings[0].length).toBe(6);
  });
});
