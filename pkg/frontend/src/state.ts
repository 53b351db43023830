/** Pure grading-flow state machine.
 *
 * Everything here is synchronous and side-effect free so the submission
 * rules (required aspects, closed grade set, keyboard entry, retry queue)
 * are unit-testable without a browser or a server.
 */

import type { CaseView, GradePayload, Rubric } from "./api.js";

/** Aspect display order; "type" maps to the wire field "lesion_type". */
export const ASPECT_ORDER = ["location", "body_part", "type", "attributes"] as const;
export type Aspect = (typeof ASPECT_ORDER)[number];
export const REQUIRED_ASPECTS: readonly Aspect[] = ["location", "body_part", "type"];

export interface GradingState {
  rubric: Rubric;
  currentCase: CaseView | null;
  /** Grade term per aspect, exactly as the rubric spells it. */
  selections: Partial<Record<Aspect, string>>;
  note: string;
  /** Which aspect the next keyboard shortcut applies to. */
  activeAspect: Aspect;
  /** Inline validation or server error, empty when clean. */
  message: string;
  gradedCount: number;
}

export interface QueuedSubmission {
  caseId: string;
  payload: GradePayload;
}

export function initialState(rubric: Rubric): GradingState {
  return {
    rubric,
    currentCase: null,
    selections: {},
    note: "",
    activeAspect: "location",
    message: "",
    gradedCount: 0,
  };
}

/** Rubric grade terms in server order; keyboard keys 1..n index into this. */
export function gradeTerms(rubric: Rubric): string[] {
  return Object.keys(rubric.grades);
}

export function loadCase(state: GradingState, caseView: CaseView): GradingState {
  return {
    ...state,
    currentCase: caseView,
    selections: {},
    note: "",
    activeAspect: "location",
    message: "",
  };
}

export function selectGrade(state: GradingState, aspect: Aspect, grade: string): GradingState {
  if (!gradeTerms(state.rubric).includes(grade)) {
    return { ...state, message: `"${grade}" is not a rubric grade` };
  }
  return {
    ...state,
    selections: { ...state.selections, [aspect]: grade },
    message: "",
  };
}

export function setActiveAspect(state: GradingState, aspect: Aspect): GradingState {
  return { ...state, activeAspect: aspect };
}

function nextAspect(aspect: Aspect): Aspect {
  const i = ASPECT_ORDER.indexOf(aspect);
  return ASPECT_ORDER[Math.min(i + 1, ASPECT_ORDER.length - 1)] as Aspect;
}

/** Keys "1".."4" grade the active aspect and move focus to the next one;
 * anything else leaves the state untouched. */
export function handleKey(state: GradingState, key: string): GradingState {
  const terms = gradeTerms(state.rubric);
  const index = Number.parseInt(key, 10) - 1;
  if (!/^[0-9]$/.test(key) || index < 0 || index >= terms.length) return state;
  const graded = selectGrade(state, state.activeAspect, terms[index] as string);
  return { ...graded, activeAspect: nextAspect(state.activeAspect) };
}

/** Aspects still blocking submission, in display order. */
export function missingAspects(state: GradingState): Aspect[] {
  return REQUIRED_ASPECTS.filter((a) => !state.selections[a]);
}

export function canSubmit(state: GradingState): boolean {
  return state.currentCase !== null && missingAspects(state).length === 0;
}

/** Build the wire payload, or explain inline why submission is blocked. */
export function buildPayload(
  state: GradingState,
  graderId: string,
): { payload: GradePayload } | { blocked: GradingState } {
  const missing = missingAspects(state);
  if (state.currentCase === null || missing.length > 0) {
    const message =
      state.currentCase === null
        ? "no case loaded"
        : `grade ${missing.join(", ")} before submitting`;
    return { blocked: { ...state, message } };
  }
  const payload: GradePayload = {
    grader_id: graderId,
    location: state.selections.location as string,
    body_part: state.selections.body_part as string,
    lesion_type: state.selections.type as string,
  };
  if (state.selections.attributes) payload.attributes = state.selections.attributes;
  if (state.note.trim()) payload.note = state.note.trim();
  return { payload };
}

export function afterSubmit(state: GradingState): GradingState {
  return {
    ...state,
    currentCase: null,
    selections: {},
    note: "",
    activeAspect: "location",
    message: "",
    gradedCount: state.gradedCount + 1,
  };
}

/** FIFO queue of submissions that failed on network errors.
 *
 * Server validation errors (4xx) are never queued: the payload is wrong and
 * retrying verbatim cannot help. The queue length drives the "unsent"
 * indicator in the UI.
 */
export class RetryQueue {
  private items: QueuedSubmission[] = [];

  get length(): number {
    return this.items.length;
  }

  enqueue(item: QueuedSubmission): void {
    this.items.push(item);
  }

  peekAll(): readonly QueuedSubmission[] {
    return this.items;
  }

  /** Retry in order; stop at the first item that fails again. */
  async flush(submit: (item: QueuedSubmission) => Promise<void>): Promise<number> {
    let sent = 0;
    while (this.items.length > 0) {
      const head = this.items[0] as QueuedSubmission;
      try {
        await submit(head);
      } catch {
        break;
      }
      this.items.shift();
      sent += 1;
    }
    return sent;
  }
}
