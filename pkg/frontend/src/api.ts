// Typed client for the study service HTTP API (see ../docs/api.md).
// Field names mirror the wire format exactly.

export interface TurnView {
  turn_index: number;
  student_text: string;
  tutor_text: string;
  annotated: boolean;
}

export interface SessionView {
  session_id: string;
  level: string;
  topic: string;
  offered_topics: string[];
  turn_limit: number;
  turns: TurnView[];
  survey_done: boolean;
  method_label?: string | null;
  method?: string;
}

export interface TurnReply {
  turn_index: number;
  tutor_text: string;
}

export interface CharRange {
  start: number;
  end: number;
}

export interface AnnotationAck {
  turn_index: number;
  tmr: number;
  total_tokens: number;
  missed_tokens: number;
  revision: number;
}

export interface SurveyAnswers {
  understand: number;
  effort: number;
  comfort: number;
  natural: number;
  again: number;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    detail: string,
  ) {
    super(detail);
    this.name = "ApiError";
  }

  get retriable(): boolean {
    return this.status >= 500 || this.status === 0;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  let resp: Response;
  try {
    resp = await fetch(url, init);
  } catch (err) {
    throw new ApiError(0, `service unreachable: ${String(err)}`);
  }
  if (!resp.ok) {
    let detail = `HTTP ${resp.status}`;
    try {
      const body = await resp.json();
      if (body && body.detail) detail = JSON.stringify(body.detail);
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

export class StudyApi {
  constructor(private readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return request<T>(this.url(path), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  createSession(args: {
    user_level: string;
    method: string;
    participant_id: string;
    consent_acknowledged: boolean;
  }): Promise<SessionView> {
    return this.post<SessionView>("/sessions", args);
  }

  getSession(sessionId: string): Promise<SessionView> {
    return request<SessionView>(this.url(`/sessions/${sessionId}`));
  }

  postTurn(sessionId: string, studentText: string, topic?: string): Promise<TurnReply> {
    const body: { student_text: string; topic?: string } = { student_text: studentText };
    if (topic !== undefined) body.topic = topic;
    return this.post<TurnReply>(`/sessions/${sessionId}/turns`, body);
  }

  postAnnotation(
    sessionId: string,
    turnIndex: number,
    spans: CharRange[],
    understoodOverall: boolean,
  ): Promise<AnnotationAck> {
    return this.post<AnnotationAck>(`/sessions/${sessionId}/annotations`, {
      turn_index: turnIndex,
      spans,
      understood_overall: understoodOverall,
    });
  }

  postSurvey(sessionId: string, answers: SurveyAnswers): Promise<{ ok: boolean }> {
    return this.post<{ ok: boolean }>(`/sessions/${sessionId}/survey`, { answers });
  }

  exportStudy(): Promise<unknown[]> {
    return request<unknown[]>(this.url("/export"));
  }
}
