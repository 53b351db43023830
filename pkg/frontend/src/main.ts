/** Single-page grading flow: fetch next case, render, capture grades, submit.
 *
 * All rubric terms come from the server; nothing grade-related is hard-coded
 * here. Judge verdicts are never requested or shown.
 */

import { ApiError, GraderApi, isDone } from "./api.js";
import type { CaseView } from "./api.js";
import {
  ASPECT_ORDER,
  REQUIRED_ASPECTS,
  afterSubmit,
  buildPayload,
  gradeTerms,
  handleKey,
  initialState,
  loadCase,
  selectGrade,
  setActiveAspect,
  RetryQueue,
  type Aspect,
  type GradingState,
} from "./state.js";

function $(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
}

function readSetting(key: string, label: string): string {
  const fromQuery = new URLSearchParams(window.location.search).get(key);
  const stored = fromQuery ?? window.localStorage.getItem(key) ?? window.prompt(label) ?? "";
  if (stored) window.localStorage.setItem(key, stored);
  return stored;
}

const baseUrl = readSetting("base_url", "Service base URL") || window.location.origin;
const token = readSetting("token", "Grader token");
const graderId = readSetting("grader_id", "Your grader id");

const api = new GraderApi(baseUrl, token);
const queue = new RetryQueue();
let state: GradingState;
let sessionId = "";

function renderStatus(): void {
  $("progress").textContent = `graded: ${state.gradedCount}`;
  $("unsent").textContent = queue.length > 0 ? `unsent: ${queue.length}` : "";
  $("message").textContent = state.message;
}

function renderCase(caseView: CaseView): void {
  $("gold-sentence").textContent = caseView.gold_sentence;
  $("prediction").textContent = caseView.prediction;
  $("case-label").textContent = `${caseView.finding_id} / ${caseView.model_name} / ${caseView.scenario}`;
  const gold = caseView.gold_aspects;
  $("gold-aspects").textContent = [
    gold.location && `location: ${gold.location}`,
    gold.body_part && `body part: ${gold.body_part}`,
    gold.lesion_type && `type: ${gold.lesion_type}`,
  ]
    .filter(Boolean)
    .join("  |  ");
  void api.caseImageBlob(caseView.case_id).then((blob) => {
    ($("slice") as HTMLImageElement).src = URL.createObjectURL(blob);
  });
}

function renderAspects(): void {
  const container = $("aspects");
  container.innerHTML = "";
  const terms = gradeTerms(state.rubric);
  for (const aspect of ASPECT_ORDER) {
    const group = document.createElement("fieldset");
    group.className = aspect === state.activeAspect ? "aspect active" : "aspect";
    const legend = document.createElement("legend");
    const required = (REQUIRED_ASPECTS as readonly string[]).includes(aspect);
    legend.textContent = `${aspect.replace("_", " ")}${required ? "" : " (optional)"}`;
    legend.title = state.rubric.aspects[aspect] ?? "";
    legend.onclick = () => {
      state = setActiveAspect(state, aspect);
      renderAspects();
    };
    group.appendChild(legend);
    terms.forEach((term, i) => {
      const label = document.createElement("label");
      const radio = document.createElement("input");
      radio.type = "radio";
      radio.name = `grade-${aspect}`;
      radio.checked = state.selections[aspect] === term;
      radio.onchange = () => {
        state = selectGrade(state, aspect, term);
        renderAspects();
        renderStatus();
      };
      label.appendChild(radio);
      label.appendChild(document.createTextNode(` ${i + 1}. ${term}`));
      label.title = state.rubric.grades[term] ?? "";
      group.appendChild(label);
    });
    container.appendChild(group);
  }
}

async function advance(): Promise<void> {
  const next = await api.nextCase(sessionId);
  if (isDone(next)) {
    $("case-label").textContent = "session complete";
    $("gold-sentence").textContent = "";
    $("prediction").textContent = "";
    $("gold-aspects").textContent = "";
    ($("slice") as HTMLImageElement).removeAttribute("src");
    ($("submit") as HTMLButtonElement).disabled = true;
    return;
  }
  state = loadCase(state, next);
  renderCase(next);
  renderAspects();
  renderStatus();
}

async function submitCurrent(): Promise<void> {
  const result = buildPayload(state, graderId);
  if ("blocked" in result) {
    state = result.blocked;
    renderStatus();
    return;
  }
  const caseId = (state.currentCase as CaseView).case_id;
  try {
    await api.submitGrades(caseId, result.payload);
  } catch (err) {
    if (err instanceof ApiError) {
      state = { ...state, message: err.detail };
      renderStatus();
      return;
    }
    queue.enqueue({ caseId, payload: result.payload });
  }
  state = afterSubmit(state);
  renderStatus();
  await advance();
}

async function flushQueue(): Promise<void> {
  await queue.flush(async (item) => {
    await api.submitGrades(item.caseId, item.payload);
  });
  renderStatus();
}

async function start(): Promise<void> {
  const rubric = await api.rubric();
  state = initialState(rubric);

  const sessions = await api.listSessions();
  const mine = sessions.filter((s) => s.assigned_grader === graderId);
  if (mine.length > 0) {
    const resumed = mine[mine.length - 1];
    sessionId = resumed ? resumed.session_id : "";
    state = { ...state, gradedCount: resumed?.progress ?? 0 };
  } else {
    const size = Number.parseInt(readSetting("sample_size", "Cases to grade"), 10) || 10;
    const seed = Number.parseInt(readSetting("seed", "Sampling seed"), 10) || 0;
    const session = await api.createSession(graderId, size, seed);
    sessionId = session.session_id;
  }

  $("submit").onclick = () => void submitCurrent();
  ($("note") as HTMLTextAreaElement).oninput = (e) => {
    state = { ...state, note: (e.target as HTMLTextAreaElement).value };
  };
  document.addEventListener("keydown", (e) => {
    if (e.target instanceof HTMLTextAreaElement) return;
    if (e.key === "Enter") {
      void submitCurrent();
      return;
    }
    const updated = handleKey(state, e.key);
    if (updated !== state) {
      state = updated;
      renderAspects();
      renderStatus();
    }
  });
  window.setInterval(() => void flushQueue(), 5000);

  await advance();
}

void start().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
