// In-memory stand-in for the listening service, faithful to its
// endpoint contract: anonymized stimulus tokens, screening gate,
// one-trial-at-a-time serving, and full-record rating validation.
// Condition names live only in here; any leak into the DOM is a bug.

import type { FetchLike, StimulusRating } from "../src/api.js";

export interface MockConfig {
  nTrials: number;
  secretConditions: string[]; // 7 names the client must never see
}

interface MockTrial {
  trialId: string;
  tokens: string[]; // one per condition, opaque
}

function jsonResponse(status: number, body: unknown): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

export class MockService {
  trials: MockTrial[] = [];
  tokenToCondition = new Map<string, string>();
  screeningAnswers = [0, 1, 2, 0, 1, 2];
  submittedScreenings: number[][] = [];
  submittedRatings = new Map<string, StimulusRating[]>();
  screeningPassed: boolean | null = null;
  failScreening = false;
  sessionCount = 0;

  constructor(cfg: MockConfig) {
    for (let t = 0; t < cfg.nTrials; t++) {
      const tokens = cfg.secretConditions.map(
        (c, i) => `tok${t}x${i}${Math.abs(hash(`${c}|${t}`)).toString(16)}`);
      tokens.forEach((tok, i) =>
        this.tokenToCondition.set(tok, cfg.secretConditions[i]));
      this.trials.push({ trialId: `trial-${t}`, tokens });
    }
  }

  get fetch(): FetchLike {
    return async (url: string, init?: RequestInit) => this.route(url, init);
  }

  private currentTrial(): MockTrial | null {
    for (const t of this.trials) {
      if (!this.submittedRatings.has(t.trialId)) return t;
    }
    return null;
  }

  private route(url: string, init?: RequestInit): Response {
    const method = init?.method ?? "GET";
    const body = init?.body ? JSON.parse(String(init.body)) : undefined;

    if (method === "POST" && /\/experiments\/[^/]+\/sessions$/.test(url)) {
      this.sessionCount += 1;
      return jsonResponse(201, { session_id: "mock-session", n_trials: this.trials.length });
    }
    if (method === "GET" && url.includes("/screening")) {
      return jsonResponse(200, {
        trials: [0, 1, 2, 3, 4, 5].map((i) => ({
          index: i, url: `/audio/scr-${i}.wav`, n_tones: 3,
        })),
        instructions: "pick the quietest tone",
      });
    }
    if (method === "POST" && url.includes("/screening")) {
      this.submittedScreenings.push(body.answers);
      this.screeningPassed = !this.failScreening;
      return jsonResponse(200, { passed: this.screeningPassed, n_correct: this.failScreening ? 3 : 6 });
    }
    if (method === "GET" && url.includes("/next")) {
      if (!this.screeningPassed) return jsonResponse(403, { detail: "screening not passed" });
      const trial = this.currentTrial();
      if (!trial) {
        return jsonResponse(200, {
          done: true, completed: this.trials.length, total: this.trials.length,
        });
      }
      return jsonResponse(200, {
        done: false,
        trial_id: trial.trialId,
        stimuli: trial.tokens.map((tok, slot) => ({
          slot, token: tok, url: `/audio/${tok}.wav`,
        })),
        scale: { min: 1, max: 7 },
        anchors: { high_url: "/audio/anchorhightok.wav", low_url: "/audio/anchorlowtok.wav" },
        progress: { completed: this.submittedRatings.size, total: this.trials.length },
      });
    }
    if (method === "POST" && url.includes("/ratings")) {
      const trial = this.trials.find((t) => t.trialId === body.trial_id);
      if (!trial) return jsonResponse(404, { detail: "unknown trial" });
      const ratings: StimulusRating[] = body.ratings;
      const tokens = new Set(ratings.map((r) => r.token));
      if (ratings.length !== 7 || tokens.size !== 7 ||
          !trial.tokens.every((t) => tokens.has(t))) {
        return jsonResponse(400, { detail: "ratings must cover the served stimuli" });
      }
      for (const r of ratings) {
        if (r.rating < 1 || r.rating > 7) return jsonResponse(400, { detail: "rating range" });
        if (r.play_count < 1) return jsonResponse(400, { detail: "unplayed stimulus" });
      }
      this.submittedRatings.set(body.trial_id, ratings);
      return jsonResponse(200, {
        accepted: true,
        remaining: this.trials.length - this.submittedRatings.size,
      });
    }
    return jsonResponse(404, { detail: `no route for ${method} ${url}` });
  }
}

function hash(s: string): number {
  let h = 0;
  for (let i = 0; i < s.length; i++) h = (h * 31 + s.charCodeAt(i)) | 0;
  return h;
}

export class FakePlayer {
  playCount = 0;
  constructor(public url: string) {}
  async play(): Promise<void> {
    this.playCount += 1;
  }
}
