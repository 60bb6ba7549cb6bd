// Typed client for the listening-test service. All payloads are opaque:
// stimulus identity travels as tokens and /audio/ URLs only.

export interface StimulusSlot {
  slot: number;
  token: string;
  url: string;
}

export interface ScreeningTrial {
  index: number;
  url: string;
  n_tones: number;
}

export interface ScreeningPayload {
  trials: ScreeningTrial[];
  instructions: string;
}

export interface TrialPayload {
  done: boolean;
  trial_id?: string;
  stimuli?: StimulusSlot[];
  scale?: { min: number; max: number };
  anchors?: { high_url: string; low_url: string };
  progress?: { completed: number; total: number };
  completed?: number;
  total?: number;
}

export interface StimulusRating {
  token: string;
  rating: number;
  play_count: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  audioUrl(path: string): string {
    return this.baseUrl + path;
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method, headers: { "content-type": "application/json" } };
    if (body !== undefined) init.body = JSON.stringify(body);
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      throw new ApiError(resp.status, `${method} ${path} -> ${resp.status}`);
    }
    return (await resp.json()) as T;
  }

  async createSession(experimentId: string): Promise<string> {
    const doc = await this.request<{ session_id: string }>(
      "POST", `/experiments/${experimentId}/sessions`);
    return doc.session_id;
  }

  getScreening(sessionId: string): Promise<ScreeningPayload> {
    return this.request("GET", `/sessions/${sessionId}/screening`);
  }

  submitScreening(sessionId: string, answers: number[]):
      Promise<{ passed: boolean; n_correct?: number }> {
    return this.request("POST", `/sessions/${sessionId}/screening`, { answers });
  }

  nextTrial(sessionId: string): Promise<TrialPayload> {
    return this.request("GET", `/sessions/${sessionId}/next`);
  }

  submitRatings(sessionId: string, trialId: string, ratings: StimulusRating[]):
      Promise<{ accepted: boolean; remaining?: number }> {
    return this.request("POST", `/sessions/${sessionId}/ratings`,
                        { trial_id: trialId, ratings });
  }
}
