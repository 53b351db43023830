import { describe, expect, it } from "vitest";

import { ApiError, GraderApi, isDone, type FetchLike } from "../src/api.js";

function fakeFetch(
  handler: (url: string, init?: RequestInit) => { status: number; body: unknown },
): { fetch: FetchLike; calls: Array<{ url: string; init?: RequestInit }> } {
  const calls: Array<{ url: string; init?: RequestInit }> = [];
  const fetch: FetchLike = async (url, init) => {
    calls.push({ url, init });
    const { status, body } = handler(url, init);
    return new Response(JSON.stringify(body), {
      status,
      headers: { "Content-Type": "application/json" },
    });
  };
  return { fetch, calls };
}

describe("GraderApi", () => {
  it("sends the token header on every call", async () => {
    const { fetch, calls } = fakeFetch(() => ({ status: 200, body: { aspects: {}, grades: {} } }));
    const api = new GraderApi("http://svc", "tok123", fetch);
    await api.rubric();
    await api.exportSheets().catch(() => undefined);
    for (const call of calls) {
      expect((call.init?.headers as Record<string, string>)["X-Grader-Token"]).toBe("tok123");
    }
  });

  it("posts grade payloads as JSON to the case endpoint", async () => {
    const { fetch, calls } = fakeFetch(() => ({
      status: 200,
      body: { status: "ok", overwrote: false },
    }));
    const api = new GraderApi("http://svc", "t", fetch);
    const ack = await api.submitGrades("f1::m::bbox-nocot", {
      grader_id: "g",
      location: "Correct",
      body_part: "Correct",
      lesion_type: "Incorrect",
    });
    expect(ack.overwrote).toBe(false);
    const call = calls[0]!;
    expect(call.url).toBe("http://svc/api/cases/f1%3A%3Am%3A%3Abbox-nocot/grades");
    expect(call.init?.method).toBe("POST");
    expect(JSON.parse(call.init?.body as string).lesion_type).toBe("Incorrect");
  });

  it("surfaces server validation details as ApiError", async () => {
    const { fetch } = fakeFetch(() => ({
      status: 422,
      body: { detail: "grade 'Mostly Correct' for 'location' is not in the rubric" },
    }));
    const api = new GraderApi("http://svc", "t", fetch);
    await expect(
      api.submitGrades("c", {
        grader_id: "g",
        location: "Mostly Correct",
        body_part: "Correct",
        lesion_type: "Correct",
      }),
    ).rejects.toMatchObject({ status: 422, detail: expect.stringContaining("Mostly Correct") });
  });

  it("maps 401 to ApiError with status", async () => {
    const { fetch } = fakeFetch(() => ({ status: 401, body: { detail: "missing token" } }));
    const api = new GraderApi("http://svc", "wrong", fetch);
    await expect(api.listSessions()).rejects.toBeInstanceOf(ApiError);
  });

  it("distinguishes a next case from session completion", () => {
    expect(isDone({ done: true, progress: 3 })).toBe(true);
    expect(
      isDone({
        case_id: "c",
        finding_id: "f",
        model_name: "m",
        scenario: "bbox-nocot",
        gold_sentence: "s",
        gold_aspects: { body_part: null, location: null, lesion_type: null },
        prediction: "p",
        image_url: "u",
      }),
    ).toBe(false);
  });
});
