// Session flow state machine.
//
// One strict loop per conversation: pick a topic, then for every turn
// send text, wait for the tutor reply, and annotate it (possibly with no
// highlights) before the next turn unlocks. After the final turn the
// survey gate opens. Only one request is ever in flight.

import {
  ApiError,
  StudyApi,
  type AnnotationAck,
  type CharRange,
  type SurveyAnswers,
} from "./api";
import { clampRange, mergeRanges } from "./spans";

export type Phase =
  | "idle"
  | "selecting_topic"
  | "chatting"
  | "awaiting_reply"
  | "annotating"
  | "survey"
  | "done"
  | "error";

export interface UiTurn {
  index: number;
  student: string;
  tutor: string;
  annotated: boolean;
  ack?: AnnotationAck;
}

export interface UiSessionState {
  phase: Phase;
  sessionId: string | null;
  level: string;
  blind: boolean;
  methodLabel: string | null;
  offeredTopics: string[];
  topic: string | null;
  turnLimit: number;
  turns: UiTurn[];
  surveyDone: boolean;
  error: string | null;
  errorRetriable: boolean;
}

const SURVEY_KEYS: (keyof SurveyAnswers)[] = [
  "understand",
  "effort",
  "comfort",
  "natural",
  "again",
];

export class FlowError extends Error {}

export class SessionFlow {
  private state_: UiSessionState;
  private pendingTopic: string | null = null;

  constructor(
    private readonly api: StudyApi,
    private readonly opts: {
      level: string;
      blind: boolean;
      method?: string;
      participantId?: string;
    },
  ) {
    this.state_ = {
      phase: "idle",
      sessionId: null,
      level: opts.level,
      blind: opts.blind,
      methodLabel: null,
      offeredTopics: [],
      topic: null,
      turnLimit: 0,
      turns: [],
      surveyDone: false,
      error: null,
      errorRetriable: false,
    };
  }

  get state(): UiSessionState {
    return { ...this.state_, turns: this.state_.turns.map((t) => ({ ...t })) };
  }

  private require(phase: Phase, action: string): void {
    if (this.state_.phase !== phase) {
      throw new FlowError(`${action} is not allowed in phase ${this.state_.phase}`);
    }
  }

  private fail(err: unknown): never {
    const retriable = err instanceof ApiError && err.retriable;
    this.state_.phase = "error";
    this.state_.error = err instanceof Error ? err.message : String(err);
    this.state_.errorRetriable = retriable;
    throw err;
  }

  async start(): Promise<UiSessionState> {
    this.require("idle", "start");
    const method = this.opts.blind ? "blind" : (this.opts.method ?? "baseline");
    try {
      const session = await this.api.createSession({
        user_level: this.opts.level,
        method,
        participant_id: this.opts.participantId ?? "anonymous",
        consent_acknowledged: true,
      });
      this.state_.sessionId = session.session_id;
      this.state_.methodLabel = session.method_label ?? null;
      this.state_.offeredTopics = session.offered_topics;
      this.state_.turnLimit = session.turn_limit;
      this.state_.phase = "selecting_topic";
    } catch (err) {
      // no session is kept locally on failure; start() may be retried
      this.state_ = { ...this.state_, sessionId: null };
      this.fail(err);
    }
    return this.state;
  }

  retry(): void {
    if (this.state_.phase !== "error") throw new FlowError("nothing to retry");
    this.state_.phase = this.state_.sessionId === null ? "idle" : "chatting";
    this.state_.error = null;
  }

  chooseTopic(topic: string): UiSessionState {
    this.require("selecting_topic", "chooseTopic");
    if (!this.state_.offeredTopics.includes(topic)) {
      throw new FlowError(`topic was not offered: ${topic}`);
    }
    this.pendingTopic = topic;
    this.state_.topic = topic;
    this.state_.phase = "chatting";
    return this.state;
  }

  get inputLocked(): boolean {
    return this.state_.phase !== "chatting";
  }

  async submitTurn(text: string): Promise<UiSessionState> {
    this.require("chatting", "submitTurn");
    if (!text.trim()) throw new FlowError("cannot send an empty turn");
    const sessionId = this.state_.sessionId;
    if (!sessionId) throw new FlowError("no session");
    this.state_.phase = "awaiting_reply";
    try {
      const topic = this.pendingTopic ?? undefined;
      const reply = await this.api.postTurn(sessionId, text, topic);
      this.pendingTopic = null;
      this.state_.turns.push({
        index: reply.turn_index,
        student: text,
        tutor: reply.tutor_text,
        annotated: false,
      });
      // the reply renders before annotation opens; annotation is mandatory
      this.state_.phase = "annotating";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // serialized posts: unlock the input, the turn was not accepted
        this.state_.phase = "chatting";
        throw err;
      }
      this.fail(err);
    }
    return this.state;
  }

  get annotatingTurn(): UiTurn | null {
    if (this.state_.phase !== "annotating") return null;
    return this.state_.turns[this.state_.turns.length - 1] ?? null;
  }

  async submitHighlights(
    ranges: CharRange[],
    understoodOverall: boolean,
  ): Promise<UiSessionState> {
    this.require("annotating", "submitHighlights");
    const turn = this.state_.turns[this.state_.turns.length - 1];
    const sessionId = this.state_.sessionId;
    if (!turn || !sessionId) throw new FlowError("no turn to annotate");
    const spans = mergeRanges(
      ranges
        .map((r) => clampRange(r, turn.tutor.length))
        .filter((r): r is CharRange => r !== null),
    );
    try {
      const ack = await this.api.postAnnotation(
        sessionId,
        turn.index,
        spans,
        understoodOverall,
      );
      turn.annotated = true;
      turn.ack = ack;
      this.state_.phase = this.state_.turns.length >= this.state_.turnLimit ? "survey" : "chatting";
    } catch (err) {
      if (err instanceof ApiError && err.status === 422) {
        this.state_.phase = "annotating"; // stay here; the user can fix the selection
        throw err;
      }
      this.fail(err);
    }
    return this.state;
  }

  async submitSurvey(answers: SurveyAnswers): Promise<UiSessionState> {
    this.require("survey", "submitSurvey");
    for (const key of SURVEY_KEYS) {
      const value = answers[key];
      if (!Number.isInteger(value) || value < 1 || value > 10) {
        throw new FlowError(`answer ${key} must be an integer in [1, 10]`);
      }
    }
    const sessionId = this.state_.sessionId;
    if (!sessionId) throw new FlowError("no session");
    try {
      await this.api.postSurvey(sessionId, answers);
      this.state_.surveyDone = true;
      this.state_.phase = "done";
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        // duplicate submit: the survey is already stored, treat as done
        this.state_.surveyDone = true;
        this.state_.phase = "done";
        return this.state;
      }
      this.fail(err);
    }
    return this.state;
  }
}
