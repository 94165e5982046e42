"""HTTP chat service for the human study loop.

Sessions pair a participant at some level with one control method for a
short fixed-length conversation. After every tutor reply the participant
highlights the character spans they did not understand; after the last turn
they answer a five-question survey. In blind mode the method is shown only
as an obfuscated label (A-D) while the true method is recorded server side
and appears exclusively in the export.

Persistence is one append-only JSONL event log per session under the data
directory; state is rebuilt by replay, and a turn is fsynced to the log
before its response leaves the process.
"""
from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from hashlib import sha256
from pathlib import Path
from typing import Sequence

from pydantic import BaseModel, Field

from . import prompts
from .levels import Level
from .lm import STUDENT, TUTOR, ChatContext, GenerationConfig, LmError
from .metrics import tmr_from_annotation
from .selfchat import SelfChatEngine
from .util import derive_seed

EVENT_SCHEMA_VERSION = 1
METHOD_LABELS = ("A", "B", "C", "D")
SURVEY_KEYS = ("understand", "effort", "comfort", "natural", "again")
BLIND = "blind"

ENV_BIND = "GRADECHAT_BIND"
ENV_DATA_DIR = "GRADECHAT_DATA_DIR"
ENV_PROVIDER = "GRADECHAT_PROVIDER"
ENV_CREDENTIAL_VAR = "GRADECHAT_CREDENTIAL_VAR"


class ServiceError(RuntimeError):
    def __init__(self, status_code: int, detail: str) -> None:
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


@dataclass
class ServiceConfig:
    data_dir: Path
    turn_limit: int = 6
    offered_topics: int = 3
    expiry_seconds: float = 24 * 3600.0
    blind_seed: int = 0
    seed: int = 0


@dataclass
class Annotation:
    turn_index: int
    spans: list[tuple[int, int]]
    understood_overall: bool
    tmr: float
    revision: int


@dataclass
class Turn:
    turn_index: int
    student_text: str
    tutor_text: str


@dataclass
class Session:
    session_id: str
    participant: str
    level: Level
    method: str
    label: str | None
    blind: bool
    topic: str
    offered_topics: list[str]
    created_at: float
    consent_acknowledged: bool
    turns: list[Turn] = field(default_factory=list)
    annotations: list[Annotation] = field(default_factory=list)
    survey: dict[str, int] | None = None
    last_active: float = 0.0

    def tutor_text_for(self, turn_index: int) -> str:
        for turn in self.turns:
            if turn.turn_index == turn_index:
                return turn.tutor_text
        raise ServiceError(404, f"turn {turn_index} not found")


def _pseudonym(participant: str) -> str:
    return sha256(("participant:" + participant).encode("utf-8")).hexdigest()[:12]


class SessionStore:
    """Replayable per-session event logs under ``data_dir/sessions``."""

    def __init__(self, data_dir: str | Path) -> None:
        self.root = Path(data_dir) / "sessions"
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        self._replay()

    # -- event log ----------------------------------------------------------

    def _path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.jsonl"

    def append(self, session_id: str, kind: str, data: dict) -> None:
        record = {"schema_version": EVENT_SCHEMA_VERSION, "event": kind, "data": data}
        with self._path(session_id).open("a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def record(self, session_id: str, kind: str, data: dict) -> None:
        """Durably append, then apply to in-memory state, in that order."""
        self.append(session_id, kind, data)
        self._apply(kind, data)

    def _replay(self) -> None:
        for path in sorted(self.root.glob("*.jsonl")):
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = json.loads(line)
                self._apply(record["event"], record["data"])

    def _apply(self, kind: str, data: dict) -> None:
        if kind == "session_created":
            session = Session(
                session_id=data["session_id"],
                participant=data["participant"],
                level=Level.from_label(data["level"]),
                method=data["method"],
                label=data.get("label"),
                blind=data["blind"],
                topic=data.get("topic", ""),
                offered_topics=list(data.get("offered_topics", [])),
                created_at=data["created_at"],
                consent_acknowledged=data.get("consent_acknowledged", False),
                last_active=data["created_at"],
            )
            self.sessions[session.session_id] = session
        elif kind == "topic_chosen":
            session = self.sessions[data["session_id"]]
            session.topic = data["topic"]
        elif kind == "turn_posted":
            session = self.sessions[data["session_id"]]
            session.turns.append(
                Turn(data["turn_index"], data["student_text"], data["tutor_text"])
            )
            session.last_active = data["at"]
        elif kind == "annotation_posted":
            session = self.sessions[data["session_id"]]
            session.annotations.append(
                Annotation(
                    turn_index=data["turn_index"],
                    spans=[tuple(s) for s in data["spans"]],
                    understood_overall=data["understood_overall"],
                    tmr=data["tmr"],
                    revision=data["revision"],
                )
            )
        elif kind == "survey_posted":
            session = self.sessions[data["session_id"]]
            session.survey = dict(data["answers"])
        # Unknown event kinds are ignored so newer logs stay readable.

    # -- helpers -------------------------------------------------------------

    def lock_for(self, session_id: str) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(session_id, threading.Lock())

    def get(self, session_id: str) -> Session:
        session = self.sessions.get(session_id)
        if session is None:
            raise ServiceError(404, f"unknown session: {session_id}")
        return session

    def topics_used_by(self, participant: str) -> set[str]:
        return {
            s.topic for s in self.sessions.values() if s.participant == participant and s.topic
        }

    def blind_sessions_of(self, participant: str) -> int:
        return sum(
            1 for s in self.sessions.values() if s.participant == participant and s.blind
        )

    def compact(self, session_id: str) -> None:
        """Rewrite a session's log as a minimal equivalent event sequence."""
        session = self.get(session_id)
        path = self._path(session_id)
        tmp = path.with_suffix(".jsonl.tmp")
        with tmp.open("w", encoding="utf-8") as fh:
            events: list[tuple[str, dict]] = [
                (
                    "session_created",
                    {
                        "session_id": session.session_id,
                        "participant": session.participant,
                        "level": session.level.label,
                        "method": session.method,
                        "label": session.label,
                        "blind": session.blind,
                        "topic": session.topic,
                        "offered_topics": session.offered_topics,
                        "created_at": session.created_at,
                        "consent_acknowledged": session.consent_acknowledged,
                    },
                )
            ]
            for turn in session.turns:
                events.append(
                    (
                        "turn_posted",
                        {
                            "session_id": session.session_id,
                            "turn_index": turn.turn_index,
                            "student_text": turn.student_text,
                            "tutor_text": turn.tutor_text,
                            "at": session.last_active,
                        },
                    )
                )
            for ann in session.annotations:
                events.append(
                    (
                        "annotation_posted",
                        {
                            "session_id": session.session_id,
                            "turn_index": ann.turn_index,
                            "spans": [list(s) for s in ann.spans],
                            "understood_overall": ann.understood_overall,
                            "tmr": ann.tmr,
                            "revision": ann.revision,
                        },
                    )
                )
            if session.survey is not None:
                events.append(
                    (
                        "survey_posted",
                        {"session_id": session.session_id, "answers": session.survey},
                    )
                )
            for kind, data in events:
                record = {"schema_version": EVENT_SCHEMA_VERSION, "event": kind, "data": data}
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        tmp.replace(path)


class StudyService:
    """Transport-independent core behind the HTTP app (and the CLI chat)."""

    def __init__(
        self,
        engine: SelfChatEngine,
        store: SessionStore,
        config: ServiceConfig,
        clock=time.time,
    ) -> None:
        self.engine = engine
        self.store = store
        self.config = config
        self.clock = clock

    # -- sessions ------------------------------------------------------------

    def _offer_topics(self, participant: str, level: Level) -> list[str]:
        pool = prompts.human_topic_pool(level)
        used = self.store.topics_used_by(participant)
        available = [t for t in pool if t not in used]
        if not available:
            raise ServiceError(409, f"topic pool exhausted for participant at {level.label}")
        rng_seed = derive_seed(
            self.config.seed, "topics", participant, len(self.store.topics_used_by(participant))
        )
        import random

        rng = random.Random(rng_seed)
        take = min(self.config.offered_topics, len(available))
        return rng.sample(available, take)

    def _assign_blind(self, participant: str) -> tuple[str, str]:
        import random

        from .control import METHODS

        order = list(METHODS)
        random.Random(derive_seed(self.config.blind_seed, "blind", participant)).shuffle(order)
        n = self.store.blind_sessions_of(participant)
        return order[n % len(order)], METHOD_LABELS[n % len(METHOD_LABELS)]

    def create_session(
        self,
        user_level: str | int,
        method: str,
        participant: str = "anonymous",
        topic: str | None = None,
        consent_acknowledged: bool = False,
    ) -> dict:
        from .control import METHODS

        try:
            level = Level.parse(user_level)
        except ValueError as exc:
            raise ServiceError(422, str(exc)) from exc
        blind = method == BLIND
        if blind:
            true_method, label = self._assign_blind(participant)
        else:
            if method not in METHODS:
                raise ServiceError(
                    422, f"unknown method {method!r}; valid: {', '.join(METHODS + (BLIND,))}"
                )
            true_method, label = method, None
        offered = self._offer_topics(participant, level)
        if topic is not None:
            if topic not in prompts.human_topic_pool(level):
                raise ServiceError(422, f"topic not in the {level.label} pool: {topic!r}")
            if topic in self.store.topics_used_by(participant):
                raise ServiceError(409, f"topic already used by participant: {topic!r}")
        session_id = uuid.uuid4().hex
        now = self.clock()
        self.store.record(
            session_id,
            "session_created",
            {
                "session_id": session_id,
                "participant": participant,
                "level": level.label,
                "method": true_method,
                "label": label,
                "blind": blind,
                "topic": topic or "",
                "offered_topics": offered,
                "created_at": now,
                "consent_acknowledged": consent_acknowledged,
            },
        )
        return self.session_view(session_id)

    def session_view(self, session_id: str) -> dict:
        session = self.store.get(session_id)
        view = {
            "session_id": session.session_id,
            "level": session.level.label,
            "topic": session.topic,
            "offered_topics": session.offered_topics,
            "turn_limit": self.config.turn_limit,
            "turns": [
                {
                    "turn_index": t.turn_index,
                    "student_text": t.student_text,
                    "tutor_text": t.tutor_text,
                    "annotated": any(a.turn_index == t.turn_index for a in session.annotations),
                }
                for t in session.turns
            ],
            "survey_done": session.survey is not None,
        }
        if session.blind:
            view["method_label"] = session.label
        else:
            view["method"] = session.method
            view["method_label"] = session.label
        return view

    def _check_active(self, session: Session) -> None:
        idle = self.clock() - (session.last_active or session.created_at)
        if idle > self.config.expiry_seconds:
            raise ServiceError(410, "session expired")

    # -- turns ----------------------------------------------------------------

    def post_turn(self, session_id: str, student_text: str, topic: str | None = None) -> dict:
        session = self.store.get(session_id)
        lock = self.store.lock_for(session_id)
        if not lock.acquire(blocking=False):
            raise ServiceError(409, "another turn is in flight for this session")
        try:
            self._check_active(session)
            if not student_text.strip():
                raise ServiceError(422, "student_text must be non-empty")
            if len(session.turns) >= self.config.turn_limit:
                raise ServiceError(409, f"turn limit of {self.config.turn_limit} reached")
            if topic is not None:
                if session.turns:
                    raise ServiceError(422, "topic can only be set on the first turn")
                if topic not in session.offered_topics:
                    raise ServiceError(422, f"topic was not offered: {topic!r}")
                self.store.record(
                    session_id, "topic_chosen", {"session_id": session_id, "topic": topic}
                )

            turn_index = len(session.turns) + 1
            context = self._tutor_context(session)
            context.add_turn(STUDENT, student_text)
            seed = derive_seed(self.config.seed, session_id, "turn", turn_index)
            gen_ctx = context.with_generation(context.generation.with_seed(seed))
            try:
                tutor_text = self.engine.generate_tutor(
                    session.method, gen_ctx, session.level
                )
            except LmError as exc:
                raise ServiceError(502, f"generation failed: {exc}") from exc
            data = {
                "session_id": session_id,
                "turn_index": turn_index,
                "student_text": student_text,
                "tutor_text": tutor_text,
                "at": self.clock(),
            }
            self.store.record(session_id, "turn_posted", data)
            return {"turn_index": turn_index, "tutor_text": tutor_text}
        finally:
            lock.release()

    def _tutor_context(self, session: Session) -> ChatContext:
        context = ChatContext(
            system_prompt=self.engine.tutor_system_prompt(
                session.method, session.level, derive_seed(self.config.seed, session.session_id)
            ),
            speaker=TUTOR,
            generation=GenerationConfig.tutor_default(max_tokens=self.engine.max_tokens),
        )
        for turn in session.turns:
            context.add_turn(STUDENT, turn.student_text)
            context.add_turn(TUTOR, turn.tutor_text)
        return context

    # -- annotations and survey -------------------------------------------------

    def post_annotation(
        self,
        session_id: str,
        turn_index: int,
        spans: Sequence[tuple[int, int]],
        understood_overall: bool,
    ) -> dict:
        session = self.store.get(session_id)
        self._check_active(session)
        tutor_text = session.tutor_text_for(turn_index)
        utterance = self.engine.tokenizer.tokenize(tutor_text)
        try:
            breakdown = tmr_from_annotation(utterance, [tuple(s) for s in spans])
        except ValueError as exc:
            raise ServiceError(422, str(exc)) from exc
        # annotations serialize with turn posts: one writer per event log
        with self.store.lock_for(session_id):
            revision = 1 + sum(1 for a in session.annotations if a.turn_index == turn_index)
            data = {
                "session_id": session_id,
                "turn_index": turn_index,
                "spans": [list(s) for s in spans],
                "understood_overall": understood_overall,
                "tmr": breakdown.tmr,
                "revision": revision,
            }
            self.store.record(session_id, "annotation_posted", data)
        return {
            "turn_index": turn_index,
            "tmr": breakdown.tmr,
            "total_tokens": breakdown.total_tokens,
            "missed_tokens": breakdown.cnt_above,
            "revision": revision,
        }

    def post_survey(self, session_id: str, answers: dict) -> dict:
        session = self.store.get(session_id)
        self._check_active(session)
        if not session.turns:
            raise ServiceError(409, "survey requires at least one completed turn")
        if session.survey is not None:
            raise ServiceError(409, "survey already submitted")
        if sorted(answers) != sorted(SURVEY_KEYS):
            raise ServiceError(422, f"survey needs exactly these answers: {', '.join(SURVEY_KEYS)}")
        for key, value in answers.items():
            if not isinstance(value, int) or not 1 <= value <= 10:
                raise ServiceError(422, f"answer {key!r} must be an integer in [1, 10]")
        with self.store.lock_for(session_id):
            if session.survey is not None:
                raise ServiceError(409, "survey already submitted")
            data = {"session_id": session_id, "answers": dict(answers)}
            self.store.record(session_id, "survey_posted", data)
        return {"ok": True}

    # -- export -------------------------------------------------------------------

    def export_study(self) -> list[dict]:
        """De-identified full records, stably ordered; includes true methods."""
        out = []
        for session_id in sorted(self.store.sessions):
            session = self.store.sessions[session_id]
            latest = {a.turn_index: a.revision for a in session.annotations}
            out.append(
                {
                    "session_id": session.session_id,
                    "participant": _pseudonym(session.participant),
                    "level": session.level.label,
                    "method": session.method,
                    "method_label": session.label,
                    "blind": session.blind,
                    "topic": session.topic,
                    "created_at": session.created_at,
                    "turns": [
                        {
                            "turn_index": t.turn_index,
                            "student_text": t.student_text,
                            "tutor_text": t.tutor_text,
                        }
                        for t in session.turns
                    ],
                    "annotations": [
                        {
                            "turn_index": a.turn_index,
                            "spans": [list(s) for s in a.spans],
                            "understood_overall": a.understood_overall,
                            "tmr": a.tmr,
                            "revision": a.revision,
                            "superseded": a.revision != latest[a.turn_index],
                        }
                        for a in session.annotations
                    ],
                    "survey": session.survey,
                }
            )
        return out


# --------------------------------------------------------------------------
# HTTP layer
# --------------------------------------------------------------------------


class CreateSessionBody(BaseModel):
    user_level: str
    method: str
    participant_id: str = "anonymous"
    topic: str | None = None
    consent_acknowledged: bool = False


class TurnBody(BaseModel):
    student_text: str
    topic: str | None = None


class SpanBody(BaseModel):
    start: int
    end: int


class AnnotationBody(BaseModel):
    turn_index: int
    spans: list[SpanBody] = Field(default_factory=list)
    understood_overall: bool = True


class SurveyBody(BaseModel):
    answers: dict[str, int]


def create_app(service: StudyService):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse

    app = FastAPI(title="gradechat study service")

    @app.exception_handler(ServiceError)
    async def service_error_handler(request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session(body: CreateSessionBody):
        return service.create_session(
            user_level=body.user_level,
            method=body.method,
            participant=body.participant_id,
            topic=body.topic,
            consent_acknowledged=body.consent_acknowledged,
        )

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        return service.session_view(session_id)

    @app.post("/sessions/{session_id}/turns")
    def post_turn(session_id: str, body: TurnBody):
        return service.post_turn(session_id, body.student_text, body.topic)

    @app.post("/sessions/{session_id}/annotations")
    def post_annotation(session_id: str, body: AnnotationBody):
        return service.post_annotation(
            session_id,
            body.turn_index,
            [(s.start, s.end) for s in body.spans],
            body.understood_overall,
        )

    @app.post("/sessions/{session_id}/survey")
    def post_survey(session_id: str, body: SurveyBody):
        return service.post_survey(session_id, body.answers)

    @app.get("/export")
    def export():
        return service.export_study()

    return app


def app_from_env():
    """Uvicorn factory: ``uvicorn --factory gradechat.service:app_from_env``."""
    data_dir = Path(os.environ.get(ENV_DATA_DIR, "./gradechat-data"))
    provider = os.environ.get(ENV_PROVIDER, "builtin")
    if provider == "builtin":
        from .synthcorpus import build_demo_bundle

        bundle = build_demo_bundle()
        engine = SelfChatEngine(
            lm=bundle.lm,
            predictor=bundle.predictor,
            tokenizer=bundle.tokenizer,
            gold_lexicon=bundle.gold_lexicon,
            heuristic_lexicon=bundle.heuristic_lexicon,
        )
    else:
        raise RuntimeError(
            f"unsupported {ENV_PROVIDER}={provider!r}; remote providers are wired "
            "through the library API (RemoteChatLM) with an explicit engine"
        )
    service = StudyService(engine, SessionStore(data_dir), ServiceConfig(data_dir=data_dir))
    return create_app(service)
