/** Typed client for the grading service HTTP contract.
 *
 * One base URL, one static token; every authorized call carries the
 * X-Grader-Token header. The fetch function is injectable so unit tests can
 * run without a server.
 */

export interface Rubric {
  aspects: Record<string, string>;
  grades: Record<string, string>;
}

export interface GoldAspects {
  body_part: string | null;
  location: string | null;
  lesion_type: string | null;
}

export interface CaseView {
  case_id: string;
  finding_id: string;
  model_name: string;
  scenario: string;
  gold_sentence: string;
  gold_aspects: GoldAspects;
  prediction: string;
  image_url: string;
}

export interface SessionView {
  session_id: string;
  case_ids: string[];
  assigned_grader: string;
  seed: number;
  progress?: number;
}

export interface GradePayload {
  grader_id: string;
  location: string;
  body_part: string;
  lesion_type: string;
  attributes?: string;
  note?: string;
}

export interface SubmitAck {
  status: string;
  overwrote: boolean;
}

/** Returned by session "next": either a case or a completion marker. */
export type NextCase = CaseView | { done: true; progress: number };

export function isDone(next: NextCase): next is { done: true; progress: number } {
  return (next as { done?: boolean }).done === true;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class GraderApi {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string,
    private readonly fetchFn: FetchLike = (...args) => fetch(...args),
  ) {}

  private async request<T>(path: string, init: RequestInit = {}): Promise<T> {
    const headers: Record<string, string> = {
      "X-Grader-Token": this.token,
      ...(init.body ? { "Content-Type": "application/json" } : {}),
    };
    const response = await this.fetchFn(this.baseUrl + path, { ...init, headers });
    if (!response.ok) {
      let detail = response.statusText;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body; keep the status text */
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  /** The rubric endpoint is the single source of aspect and grade terms. */
  rubric(): Promise<Rubric> {
    return this.request<Rubric>("/api/rubric");
  }

  listSessions(): Promise<SessionView[]> {
    return this.request<SessionView[]>("/api/sessions");
  }

  createSession(graderId: string, sampleSize: number, seed: number): Promise<SessionView> {
    return this.request<SessionView>("/api/sessions", {
      method: "POST",
      body: JSON.stringify({ grader_id: graderId, sample_size: sampleSize, seed }),
    });
  }

  nextCase(sessionId: string): Promise<NextCase> {
    return this.request<NextCase>(`/api/sessions/${encodeURIComponent(sessionId)}/next`);
  }

  getCase(caseId: string): Promise<CaseView> {
    return this.request<CaseView>(`/api/cases/${encodeURIComponent(caseId)}`);
  }

  /** Image bytes need the auth header too, so the <img> src goes through a blob. */
  async caseImageBlob(caseId: string): Promise<Blob> {
    const response = await this.fetchFn(
      `${this.baseUrl}/api/cases/${encodeURIComponent(caseId)}/image`,
      { headers: { "X-Grader-Token": this.token } },
    );
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.blob();
  }

  submitGrades(caseId: string, payload: GradePayload): Promise<SubmitAck> {
    return this.request<SubmitAck>(`/api/cases/${encodeURIComponent(caseId)}/grades`, {
      method: "POST",
      body: JSON.stringify(payload),
    });
  }

  async exportSheets(): Promise<string> {
    const response = await this.fetchFn(`${this.baseUrl}/api/export`, {
      headers: { "X-Grader-Token": this.token },
    });
    if (!response.ok) throw new ApiError(response.status, response.statusText);
    return response.text();
  }
}
