/** Round trip against the real Python grading service.
 *
 * Spawns the service on a random port, drives the same client code the page
 * uses (GraderApi + state machine), and checks the export matches the grades
 * entered field for field.
 */

import { spawn, type ChildProcess } from "node:child_process";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiError, GraderApi, isDone } from "../src/api.js";
import {
  buildPayload,
  canSubmit,
  handleKey,
  initialState,
  loadCase,
  selectGrade,
  type GradingState,
} from "../src/state.js";

const HERE = dirname(fileURLToPath(import.meta.url));
const PORT = 18000 + Math.floor(Math.random() * 2000);
const BASE = `http://127.0.0.1:${PORT}`;
const TOKEN = "roundtrip-token";

let server: ChildProcess;

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 100; i += 1) {
    try {
      const r = await fetch(`${BASE}/api/rubric`);
      if (r.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((resolve) => setTimeout(resolve, 200));
  }
  throw new Error("grading service did not come up");
}

beforeAll(async () => {
  server = spawn("python3", [join(HERE, "serve_fixture.py"), String(PORT), TOKEN], {
    stdio: "inherit",
  });
  await waitForServer();
}, 60000);

afterAll(() => {
  server.kill();
});

describe("grading round trip", () => {
  it("entered grades come back field-identical in the export", async () => {
    const api = new GraderApi(BASE, TOKEN);
    const rubric = await api.rubric();
    let state: GradingState = initialState(rubric);

    const session = await api.createSession("clin-rt", 3, 11);
    expect(session.case_ids).toHaveLength(3);

    const entered: Array<{ caseId: string; location: string; bodyPart: string; type: string }> =
      [];
    const patterns: string[][] = [
      ["1", "2", "3"],
      ["2", "2", "1"],
      ["3", "1", "4"],
    ];
    for (const keys of patterns) {
      const next = await api.nextCase(session.session_id);
      expect(isDone(next)).toBe(false);
      if (isDone(next)) throw new Error("unreachable");
      state = loadCase(state, next);
      for (const key of keys) state = handleKey(state, key);
      const result = buildPayload(state, "clin-rt");
      expect("payload" in result).toBe(true);
      if (!("payload" in result)) throw new Error("unreachable");
      entered.push({
        caseId: next.case_id,
        location: result.payload.location,
        bodyPart: result.payload.body_part,
        type: result.payload.lesion_type,
      });
      const ack = await api.submitGrades(next.case_id, result.payload);
      expect(ack.status).toBe("ok");
    }

    const done = await api.nextCase(session.session_id);
    expect(isDone(done)).toBe(true);

    const lines = (await api.exportSheets())
      .trim()
      .split("\n")
      .map((line) => JSON.parse(line) as Record<string, string>);
    const mine = lines.filter((l) => l.grader_id === "clin-rt");
    expect(mine).toHaveLength(3);
    for (const e of entered) {
      const [findingId, modelName, scenario] = e.caseId.split("::");
      const sheet = mine.find(
        (l) =>
          l.finding_id === findingId && l.model_name === modelName && l.scenario === scenario,
      );
      expect(sheet, e.caseId).toBeDefined();
      expect(sheet?.location).toBe(e.location);
      expect(sheet?.body_part).toBe(e.bodyPart);
      expect(sheet?.lesion_type).toBe(e.type);
    }
  }, 30000);

  it("required-aspect blocking is enforced client-side", async () => {
    const api = new GraderApi(BASE, TOKEN);
    const rubric = await api.rubric();
    const session = await api.createSession("clin-block", 1, 5);
    const next = await api.nextCase(session.session_id);
    if (isDone(next)) throw new Error("expected a case");
    let state = loadCase(initialState(rubric), next);
    state = selectGrade(state, "location", "Correct");
    expect(canSubmit(state)).toBe(false);
    const result = buildPayload(state, "clin-block");
    expect("blocked" in result).toBe(true);
  });

  it("server rejects an out-of-rubric grade the client never produces", async () => {
    const api = new GraderApi(BASE, TOKEN);
    const session = await api.createSession("clin-raw", 1, 6);
    const next = await api.nextCase(session.session_id);
    if (isDone(next)) throw new Error("expected a case");
    await expect(
      api.submitGrades(next.case_id, {
        grader_id: "clin-raw",
        location: "Mostly Correct",
        body_part: "Correct",
        lesion_type: "Correct",
      }),
    ).rejects.toMatchObject({ status: 422 });
    await expect(new GraderApi(BASE, "bad-token").rubric()).resolves.toBeDefined();
    await expect(new GraderApi(BASE, "bad-token").listSessions()).rejects.toMatchObject({
      status: 401,
    });
  });
});
