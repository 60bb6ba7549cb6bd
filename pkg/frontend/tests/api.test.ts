import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

function recordingFetch(status: number, body: unknown) {
  const calls: { url: string; init?: RequestInit }[] = [];
  const fetchFn = async (url: string, init?: RequestInit) => {
    calls.push({ url, init });
    return new Response(JSON.stringify(body), { status });
  };
  return { calls, fetchFn };
}

describe("api client", () => {
  it("targets the service endpoints with the right verbs", async () => {
    const { calls, fetchFn } = recordingFetch(201, { session_id: "s1" });
    const api = new ApiClient("http://svc", fetchFn);
    const sid = await api.createSession("exp9");
    expect(sid).toBe("s1");
    expect(calls[0].url).toBe("http://svc/experiments/exp9/sessions");
    expect(calls[0].init?.method).toBe("POST");
  });

  it("serializes rating records completely", async () => {
    const { calls, fetchFn } = recordingFetch(200, { accepted: true });
    const api = new ApiClient("", fetchFn);
    await api.submitRatings("sid", "trial-1",
      [{ token: "abc", rating: 7, play_count: 2 }]);
    const body = JSON.parse(String(calls[0].init?.body));
    expect(body).toEqual({
      trial_id: "trial-1",
      ratings: [{ token: "abc", rating: 7, play_count: 2 }],
    });
  });

  it("raises ApiError with the status on failure", async () => {
    const { fetchFn } = recordingFetch(403, { detail: "screening not passed" });
    const api = new ApiClient("", fetchFn);
    await expect(api.nextTrial("sid")).rejects.toThrowError(ApiError);
    await expect(api.nextTrial("sid")).rejects.toHaveProperty("status", 403);
  });
});
