// Participant flow: headphone screening, then MUSHRA trials of seven
// playable clips rated 1-7, then a completion screen. The DOM never
// carries condition metadata; slots know only opaque tokens and URLs.

import { ApiClient, ScreeningPayload, TrialPayload } from "./api.js";
import { Player, PlayerFactory } from "./player.js";
import { SlotState, canSubmit, incompleteSlots } from "./state.js";

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, className?: string, text?: string): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export class ListeningTestApp {
  private sessionId = "";
  private submitting = false;

  constructor(
    private root: HTMLElement,
    private api: ApiClient,
    private playerFactory: PlayerFactory,
    private experimentId: string,
  ) {}

  async start(): Promise<void> {
    this.sessionId = await this.api.createSession(this.experimentId);
    const screening = await this.api.getScreening(this.sessionId);
    this.renderScreening(screening);
  }

  // ---- screening -------------------------------------------------------

  private renderScreening(payload: ScreeningPayload): void {
    this.root.innerHTML = "";
    const box = el("div", "screening");
    box.appendChild(el("h2", undefined, "Headphone check"));
    box.appendChild(el("p", "instructions",
      "Each clip plays three tones. Pick the quietest one. Please wear headphones."));

    const answers: (number | null)[] = payload.trials.map(() => null);
    const submit = el("button", "submit-screening", "Submit answers");
    submit.disabled = true;

    payload.trials.forEach((trial, i) => {
      const row = el("div", "screening-trial");
      row.dataset.index = String(trial.index);
      const player = this.playerFactory(this.api.audioUrl(trial.url));
      const play = el("button", "play", `Play clip ${i + 1}`);
      play.addEventListener("click", () => void player.play());
      row.appendChild(play);
      for (let t = 0; t < trial.n_tones; t++) {
        const choice = el("button", "tone-choice", `Tone ${t + 1}`);
        choice.addEventListener("click", () => {
          answers[i] = t;
          row.querySelectorAll(".tone-choice").forEach((b, j) =>
            b.classList.toggle("selected", j === t));
          submit.disabled = answers.some((a) => a === null);
        });
        row.appendChild(choice);
      }
      box.appendChild(row);
    });

    submit.addEventListener("click", async () => {
      if (answers.some((a) => a === null)) return;
      submit.disabled = true;
      const result = await this.api.submitScreening(
        this.sessionId, answers as number[]);
      if (result.passed) {
        await this.showNextTrial();
      } else {
        this.renderBlocked();
      }
    });
    box.appendChild(submit);
    this.root.appendChild(box);
  }

  private renderBlocked(): void {
    this.root.innerHTML = "";
    const box = el("div", "blocked");
    box.appendChild(el("h2", undefined, "Unable to continue"));
    box.appendChild(el("p", undefined,
      "The headphone check did not pass, so this experiment cannot continue. " +
      "Thank you for your time."));
    this.root.appendChild(box);
  }

  // ---- trials ----------------------------------------------------------

  private async showNextTrial(): Promise<void> {
    const payload = await this.api.nextTrial(this.sessionId);
    if (payload.done) {
      this.renderDone(payload);
    } else {
      this.renderTrial(payload);
    }
  }

  private renderTrial(payload: TrialPayload): void {
    this.root.innerHTML = "";
    const stimuli = payload.stimuli ?? [];
    const scale = payload.scale ?? { min: 1, max: 7 };
    const slots: SlotState[] = stimuli.map((s) => ({
      token: s.token, url: s.url, rating: null, playCount: 0,
    }));
    const players: Player[] = stimuli.map(
      (s) => this.playerFactory(this.api.audioUrl(s.url)));

    const box = el("div", "trial");
    box.dataset.trialId = payload.trial_id ?? "";
    const progress = payload.progress;
    box.appendChild(el("h2", undefined, progress
      ? `Trial ${progress.completed + 1} of ${progress.total}`
      : "Trial"));
    box.appendChild(el("p", "instructions",
      `Rate how natural each clip sounds, from ${scale.min} (very unnatural) ` +
      `to ${scale.max} (completely natural). Listen to every clip at least once; ` +
      "replay as often as you wish."));

    if (payload.anchors) {
      const anchors = el("div", "anchors");
      anchors.appendChild(el("span", undefined, "Scale references:"));
      const high = el("button", "anchor-demo", `Example of a ${scale.max}`);
      const highPlayer = this.playerFactory(this.api.audioUrl(payload.anchors.high_url));
      high.addEventListener("click", () => void highPlayer.play());
      const low = el("button", "anchor-demo", `Example of a ${scale.min}`);
      const lowPlayer = this.playerFactory(this.api.audioUrl(payload.anchors.low_url));
      low.addEventListener("click", () => void lowPlayer.play());
      anchors.appendChild(high);
      anchors.appendChild(low);
      box.appendChild(anchors);
    }

    const submit = el("button", "submit-trial", "Submit ratings");
    submit.disabled = true;

    const refresh = () => {
      submit.disabled = !canSubmit(slots);
      const missing = new Set(incompleteSlots(slots));
      box.querySelectorAll(".slot").forEach((node, i) =>
        node.classList.toggle("incomplete", missing.has(i)));
    };

    slots.forEach((slot, i) => {
      const row = el("div", "slot incomplete");
      row.dataset.slot = String(i);
      const play = el("button", "play", `Play clip ${String.fromCharCode(65 + i)}`);
      play.addEventListener("click", async () => {
        await players[i].play();
        slot.playCount = players[i].playCount;
        refresh();
      });
      row.appendChild(play);
      const ratings = el("div", "ratings");
      for (let r = scale.min; r <= scale.max; r++) {
        const btn = el("button", "rating", String(r));
        btn.dataset.rating = String(r);
        btn.addEventListener("click", () => {
          slot.rating = r;
          ratings.querySelectorAll(".rating").forEach((b) =>
            b.classList.toggle("selected", b === btn));
          refresh();
        });
        ratings.appendChild(btn);
      }
      row.appendChild(ratings);
      box.appendChild(row);
    });

    submit.addEventListener("click", async () => {
      if (!canSubmit(slots) || this.submitting) return;
      this.submitting = true;
      submit.disabled = true;
      try {
        await this.api.submitRatings(
          this.sessionId, payload.trial_id ?? "",
          slots.map((s) => ({
            token: s.token,
            rating: s.rating as number,
            play_count: s.playCount,
          })));
        await this.showNextTrial();
      } finally {
        this.submitting = false;
      }
    });
    box.appendChild(submit);
    this.root.appendChild(box);
  }

  private renderDone(payload: TrialPayload): void {
    this.root.innerHTML = "";
    const box = el("div", "done");
    box.appendChild(el("h2", undefined, "All done"));
    const total = payload.total ?? payload.progress?.total ?? 0;
    box.appendChild(el("p", undefined,
      `You rated all ${total} trials. Thank you for participating!`));
    this.root.appendChild(box);
  }
}
