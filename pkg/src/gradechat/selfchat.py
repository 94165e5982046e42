"""Automatic evaluation by tutor-student self-play.

A suite simulates one dialogue per (tutor level, student level, topic)
triple for each method: 5 x 5 level pairs x 3 topics = 75 dialogues per
method at the defaults. The student opens, speaks without any difficulty
control, and stays on a topic drawn from its own level's table; the tutor
answers under the method being evaluated and is the only side that gets
scored. Per-turn metrics are kept for drift analysis across turn indices.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from . import prompts
from .classifier import Predictor
from .control import (
    METHODS,
    FudgeConfig,
    MethodError,
    RerankConfig,
    generate_baseline,
    generate_fudge,
    generate_overgenerate,
)
from .levels import LEVELS, Level
from .lexicon import LevelLexicon
from .lm import STUDENT, TUTOR, ChatContext, GenerationConfig, LmError
from .metrics import (
    MetricsReport,
    ReadabilityScorer,
    TurnMetrics,
    aggregate_turn_metrics,
    jsonable_float,
    score_utterance_metrics,
)
from .tokenizer import TokenizedUtterance, Tokenizer
from .util import derive_seed

TRANSCRIPT_SCHEMA_VERSION = 1

COMPLETE = "complete"
ABORTED = "aborted"


class SuiteError(ValueError):
    pass


@dataclass(frozen=True)
class DialogueSpec:
    tutor_level: Level
    student_level: Level
    topic: str
    method: str
    turns: int
    seed: int

    def __post_init__(self) -> None:
        if self.turns < 1:
            raise SuiteError("turns must be >= 1")
        if self.method not in METHODS:
            raise SuiteError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")


@dataclass(frozen=True)
class TurnRecord:
    role: str
    text: str
    tokens: TokenizedUtterance
    metrics: TurnMetrics | None = None


@dataclass(frozen=True)
class DialogueTranscript:
    spec: DialogueSpec
    turns: tuple[TurnRecord, ...]
    status: str = COMPLETE
    error: str | None = None

    def tutor_turns(self) -> list[TurnRecord]:
        return [t for t in self.turns if t.role == TUTOR]


def plan_suite(
    methods: Sequence[str],
    topics: Mapping[int, Sequence[str]] | None = None,
    dialogues_per_pair: int = 3,
    turns: int = 6,
    seed: int = 0,
) -> list[DialogueSpec]:
    """Deterministic full-factorial plan over level pairs and topic indices."""
    if topics is None:
        topics = prompts.selfchat_topics()
    for level in LEVELS:
        available = topics.get(level.value, ())
        if len(available) < dialogues_per_pair:
            raise SuiteError(
                f"need {dialogues_per_pair} topics for level {level}, have {len(available)}"
            )
    specs: list[DialogueSpec] = []
    for method in methods:
        for tutor_level in LEVELS:
            for student_level in LEVELS:
                for i in range(dialogues_per_pair):
                    topic = topics[student_level.value][i]
                    specs.append(
                        DialogueSpec(
                            tutor_level=tutor_level,
                            student_level=student_level,
                            topic=topic,
                            method=method,
                            turns=turns,
                            seed=derive_seed(
                                seed, method, tutor_level.value, student_level.value, i
                            ),
                        )
                    )
    return specs


@dataclass
class SelfChatEngine:
    """Bundles the models and lexicons every dialogue needs.

    ``student_lm`` defaults to the tutor-side model, mirroring a self-chat
    where one base model plays both sides with swapped contexts.
    """

    lm: object
    predictor: Predictor
    tokenizer: Tokenizer
    gold_lexicon: LevelLexicon
    heuristic_lexicon: LevelLexicon
    student_lm: object = None
    fudge_lambda: float = 0.8
    fudge_top_k: int = 50
    rerank_candidates: int = 5
    known_expressions: int = prompts.DEFAULT_KNOWN_EXPRESSIONS
    max_tokens: int = 10
    readability: ReadabilityScorer | None = None

    def __post_init__(self) -> None:
        if self.student_lm is None:
            self.student_lm = self.lm

    def tutor_system_prompt(self, method: str, level: Level, seed: int) -> str:
        if method == "detailed":
            spec = prompts.PromptSpec(
                role=prompts.TUTOR_DETAILED,
                level=level,
                known_expressions=prompts.sample_known_expressions(
                    self.heuristic_lexicon, level, self.known_expressions, seed
                ),
            )
        else:
            spec = prompts.PromptSpec(role=prompts.TUTOR_BASELINE, level=level)
        return prompts.build_prompt(spec)

    def student_system_prompt(self, level: Level, topic: str) -> str:
        spec = prompts.PromptSpec(role=prompts.STUDENT_ROLE, level=level, topic=topic)
        return prompts.build_prompt(spec)

    def generate_tutor(self, method: str, context: ChatContext, level: Level) -> str:
        if method in ("baseline", "detailed"):
            return generate_baseline(context, self.lm)
        if method == "overgenerate":
            cfg = RerankConfig(
                lexicon=self.heuristic_lexicon,
                user_level=level,
                n_candidates=self.rerank_candidates,
            )
            text, _ = generate_overgenerate(context, self.lm, cfg, self.tokenizer)
            return text
        if method == "fudge":
            cfg = FudgeConfig(
                lambda_=self.fudge_lambda, target_level=level, top_k=self.fudge_top_k
            )
            return generate_fudge(context, self.lm, self.predictor, cfg)
        raise MethodError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")


def run_dialogue(spec: DialogueSpec, engine: SelfChatEngine) -> DialogueTranscript:
    """Alternate student/tutor turns until ``spec.turns`` tutor utterances.

    The student speaks first. A provider failure mid-dialogue aborts the
    transcript but keeps every turn produced so far.
    """
    student_ctx = ChatContext(
        system_prompt=engine.student_system_prompt(spec.student_level, spec.topic),
        speaker=STUDENT,
        generation=GenerationConfig.student_default(max_tokens=engine.max_tokens),
    )
    tutor_ctx = ChatContext(
        system_prompt=engine.tutor_system_prompt(spec.method, spec.tutor_level, spec.seed),
        speaker=TUTOR,
        generation=GenerationConfig.tutor_default(max_tokens=engine.max_tokens),
    )

    records: list[TurnRecord] = []
    try:
        for turn_index in range(spec.turns):
            student_seed = derive_seed(spec.seed, "student", turn_index)
            student_text = engine.student_lm.complete(
                student_ctx.with_generation(
                    student_ctx.generation.with_seed(student_seed)
                )
            )
            student_ctx.add_turn(STUDENT, student_text)
            tutor_ctx.add_turn(STUDENT, student_text)
            records.append(
                TurnRecord(STUDENT, student_text, engine.tokenizer.tokenize(student_text))
            )

            tutor_seed = derive_seed(spec.seed, "tutor", turn_index)
            gen_ctx = tutor_ctx.with_generation(tutor_ctx.generation.with_seed(tutor_seed))
            tutor_text = engine.generate_tutor(spec.method, gen_ctx, spec.tutor_level)
            student_ctx.add_turn(TUTOR, tutor_text)
            tutor_ctx.add_turn(TUTOR, tutor_text)
            utterance = engine.tokenizer.tokenize(tutor_text)
            metrics = score_utterance_metrics(
                utterance,
                engine.gold_lexicon,
                engine.predictor,
                engine.lm,
                spec.tutor_level,
                engine.readability,
            )
            records.append(TurnRecord(TUTOR, tutor_text, utterance, metrics))
    except LmError as exc:
        return DialogueTranscript(spec, tuple(records), status=ABORTED, error=str(exc))
    return DialogueTranscript(spec, tuple(records), status=COMPLETE)


def run_suite(
    specs: Sequence[DialogueSpec],
    engine: SelfChatEngine,
    workers: int = 1,
) -> list[DialogueTranscript]:
    """Run dialogues as independent jobs, optionally on a thread pool.

    Results keep spec order and are seed-deterministic either way; the
    engine's models are immutable and safe for concurrent reads.
    """
    if workers <= 1:
        return [run_dialogue(spec, engine) for spec in specs]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda spec: run_dialogue(spec, engine), specs))


@dataclass(frozen=True)
class DriftPoint:
    turn_index: int
    mean_tmr: float
    n: int


@dataclass(frozen=True)
class SuiteReport:
    reports: tuple[MetricsReport, ...]
    drift: Mapping[str, tuple[DriftPoint, ...]]
    aborted: Mapping[str, int]
    absent_methods: tuple[str, ...]


def aggregate_suite(
    transcripts: Sequence[DialogueTranscript],
    tmr_mode: str = "macro",
    readability_label: str | None = None,
) -> SuiteReport:
    """Per-method report rows plus per-turn-index TMR drift series.

    Aborted transcripts are counted and excluded from the aggregates; a
    method with no complete transcript is marked absent instead of failing
    the whole aggregation.
    """
    methods = sorted({t.spec.method for t in transcripts}, key=METHODS.index)
    reports: list[MetricsReport] = []
    drift: dict[str, tuple[DriftPoint, ...]] = {}
    aborted: dict[str, int] = {}
    absent: list[str] = []
    for method in methods:
        mine = [t for t in transcripts if t.spec.method == method]
        complete = [t for t in mine if t.status == COMPLETE]
        aborted[method] = len(mine) - len(complete)
        if not complete:
            absent.append(method)
            continue
        per_turn: list[TurnMetrics] = []
        by_index: dict[int, list[float]] = {}
        for transcript in complete:
            for i, record in enumerate(transcript.tutor_turns(), start=1):
                assert record.metrics is not None
                per_turn.append(record.metrics)
                by_index.setdefault(i, []).append(record.metrics.tmr)
        reports.append(
            aggregate_turn_metrics(method, per_turn, readability_label, tmr_mode)
        )
        drift[method] = tuple(
            DriftPoint(i, sum(vals) / len(vals), len(vals))
            for i, vals in sorted(by_index.items())
        )
    return SuiteReport(tuple(reports), drift, aborted, tuple(absent))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


def _spec_to_dict(spec: DialogueSpec) -> dict:
    return {
        "tutor_level": spec.tutor_level.label,
        "student_level": spec.student_level.label,
        "topic": spec.topic,
        "method": spec.method,
        "turns": spec.turns,
        "seed": spec.seed,
    }


def _metrics_to_dict(m: TurnMetrics | None) -> dict | None:
    if m is None:
        return None
    return {
        "length": m.length,
        "ppl": jsonable_float(m.ppl),
        "div3": m.div3,
        "tmr": m.tmr,
        "control_error": m.control_error,
        "readability": jsonable_float(m.readability),
        "cnt_above": m.cnt_above,
        "cnt_unbinned": m.cnt_unbinned,
        "total_tokens": m.total_tokens,
    }


def write_transcripts_jsonl(path: str | Path, transcripts: Iterable[DialogueTranscript]) -> None:
    """One JSON record per dialogue, append-only, schema versioned."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        for t in transcripts:
            record = {
                "schema_version": TRANSCRIPT_SCHEMA_VERSION,
                "spec": _spec_to_dict(t.spec),
                "status": t.status,
                "error": t.error,
                "turns": [
                    {
                        "role": r.role,
                        "text": r.text,
                        "lemmas": r.tokens.lemmas,
                        "metrics": _metrics_to_dict(r.metrics),
                    }
                    for r in t.turns
                ],
            }
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")


def suite_report_to_dict(report: SuiteReport) -> dict:
    return {
        "rows": [
            {k: jsonable_float(v) if isinstance(v, float) else v for k, v in r.as_row().items()}
            for r in report.reports
        ],
        # ControlError scores utterances by expected level, not argmax
        "control_error_scorer": "expected_level",
        "readability_label": next(
            (r.readability_label for r in report.reports if r.readability_label), None
        ),
        "drift": {
            method: [
                {"turn_index": p.turn_index, "mean_tmr": p.mean_tmr, "n": p.n}
                for p in points
            ]
            for method, points in sorted(report.drift.items())
        },
        "aborted": dict(sorted(report.aborted.items())),
        "absent_methods": list(report.absent_methods),
    }


def drift_to_csv(report: SuiteReport) -> str:
    lines = ["method,turn_index,mean_tmr,n"]
    for method, points in sorted(report.drift.items()):
        for p in points:
            lines.append(f"{method},{p.turn_index},{p.mean_tmr},{p.n}")
    return "\n".join(lines) + "\n"
