"""Evaluation metrics over utterances and dialogue transcripts.

Token Miss Rate (TMR) is the share of an utterance's tokens whose
vocabulary level exceeds the learner's level; tokens the lexicon cannot bin
count toward the denominator but never toward the misses, i.e. they are
treated as understood. ControlError is the squared gap between a
difficulty scorer's output and the target level. Fluency is covered by
perplexity (from the lm module), content-token length and distinct-trigram
ratio (div@3).

There is no faithful reimplementation of the published JReadability
formula here; the readability slot takes any callable and the bundled
surrogate is labeled as such everywhere it appears.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable, Sequence

from .levels import UNBINNED, Level, _Unbinned
from .lexicon import LevelLexicon
from .lm import perplexity
from .tokenizer import TokenizedUtterance

ReadabilityScorer = Callable[[TokenizedUtterance], float]

SURROGATE_READABILITY_LABEL = "surrogate (NOT JReadability)"


class MetricDependencyError(RuntimeError):
    """A metric's scorer is missing; the message names the skipped metric."""


@dataclass(frozen=True)
class TmrBreakdown:
    total_tokens: int
    cnt_above: int
    cnt_unbinned: int
    tmr: float
    flagged: tuple[tuple[int, Level | _Unbinned], ...]

    def __post_init__(self) -> None:
        if self.cnt_above + self.cnt_unbinned > self.total_tokens:
            raise ValueError("more flagged tokens than tokens")

    @property
    def tmr_percent(self) -> float:
        return self.tmr * 100.0


def token_miss_rate(
    utterance: TokenizedUtterance,
    lexicon: LevelLexicon,
    user_level: Level,
) -> TmrBreakdown:
    total = len(utterance.tokens)
    cnt_above = 0
    cnt_unbinned = 0
    flagged: list[tuple[int, Level | _Unbinned]] = []
    for i, token in enumerate(utterance.tokens):
        level = lexicon.lookup(token.lemma)
        if level is UNBINNED:
            cnt_unbinned += 1
            flagged.append((i, UNBINNED))
        elif level.value > user_level.value:
            cnt_above += 1
            flagged.append((i, level))
    tmr = cnt_above / total if total > 0 else 0.0
    return TmrBreakdown(total, cnt_above, cnt_unbinned, tmr, tuple(flagged))


def control_error(score: float, target: Level) -> float:
    return (score - target.value) ** 2


def trigram_diversity(utterance: TokenizedUtterance) -> float:
    """Distinct / total sliding lemma trigrams; short utterances score 1.0."""
    lemmas = utterance.lemmas
    if len(lemmas) < 3:
        return 1.0
    trigrams = [tuple(lemmas[i : i + 3]) for i in range(len(lemmas) - 2)]
    return len(set(trigrams)) / len(trigrams)


def tmr_from_annotation(
    utterance: TokenizedUtterance,
    highlighted_spans: Sequence[tuple[int, int]],
) -> TmrBreakdown:
    """TMR from human highlights: any character overlap marks a token missed."""
    for start, end in highlighted_spans:
        if start >= end:
            raise ValueError(f"malformed span ({start}, {end})")
        if start < 0 or end > len(utterance.source):
            raise ValueError(f"span ({start}, {end}) outside utterance bounds")
    total = len(utterance.tokens)
    flagged: list[tuple[int, Level | _Unbinned]] = []
    for i, token in enumerate(utterance.tokens):
        if any(token.start < end and start < token.end for start, end in highlighted_spans):
            flagged.append((i, UNBINNED))
    missed = len(flagged)
    tmr = missed / total if total > 0 else 0.0
    return TmrBreakdown(total, missed, 0, tmr, tuple(flagged))


def surrogate_readability(utterance: TokenizedUtterance, lexicon: LevelLexicon) -> float:
    """Affine stand-in for a readability grade: shorter and easier reads higher.

    score = 6.0 - 0.05 * tokens - 4.0 * fraction_above_N3. This is NOT the
    published JReadability formula (whose coefficients are not public here);
    treat it as a relative signal only.
    """
    n = len(utterance.tokens)
    if n == 0:
        return 6.0
    above_n3 = sum(
        1
        for t in utterance.tokens
        if (lv := lexicon.lookup(t.lemma)) is not UNBINNED and lv.value > 3
    )
    return 6.0 - 0.05 * n - 4.0 * (above_n3 / n)


def make_surrogate_readability(lexicon: LevelLexicon) -> ReadabilityScorer:
    return lambda utterance: surrogate_readability(utterance, lexicon)


# --------------------------------------------------------------------------
# Transcript-level aggregation
# --------------------------------------------------------------------------

REPORT_COLUMNS = (
    "Model",
    "Avg. Length",
    "Avg. PPL",
    "div@3",
    "Readability",
    "TMR",
    "ControlError",
)


@dataclass(frozen=True)
class TurnMetrics:
    length: int
    ppl: float
    div3: float
    tmr: float
    control_error: float
    readability: float | None
    cnt_above: int
    cnt_unbinned: int
    total_tokens: int


@dataclass(frozen=True)
class MetricsReport:
    """One aggregate row per method: the automatic-evaluation table shape."""

    method: str
    n_utterances: int
    avg_length: float
    avg_ppl: float
    div3: float
    readability: float | None
    readability_label: str | None
    tmr_percent: float
    control_error: float

    def as_row(self) -> dict[str, object]:
        return {
            "Model": self.method,
            "Avg. Length": self.avg_length,
            "Avg. PPL": self.avg_ppl,
            "div@3": self.div3,
            "Readability": self.readability,
            "TMR": self.tmr_percent,
            "ControlError": self.control_error,
        }


def score_utterance_metrics(
    utterance: TokenizedUtterance,
    lexicon: LevelLexicon,
    predictor,
    lm,
    user_level: Level,
    readability: ReadabilityScorer | None = None,
) -> TurnMetrics:
    if lexicon is None:
        raise MetricDependencyError("lexicon missing: TMR would be skipped")
    if predictor is None:
        raise MetricDependencyError("difficulty predictor missing: ControlError would be skipped")
    if lm is None:
        raise MetricDependencyError("language model missing: Avg. PPL would be skipped")
    breakdown = token_miss_rate(utterance, lexicon, user_level)
    lemmas = utterance.lemmas
    ppl = perplexity(lm, lemmas) if lemmas else 1.0
    score = predictor.score_tokens(lemmas) if lemmas else float(user_level.value)
    return TurnMetrics(
        length=len(utterance.tokens),
        ppl=ppl,
        div3=trigram_diversity(utterance),
        tmr=breakdown.tmr,
        control_error=control_error(score, user_level),
        readability=readability(utterance) if readability is not None else None,
        cnt_above=breakdown.cnt_above,
        cnt_unbinned=breakdown.cnt_unbinned,
        total_tokens=breakdown.total_tokens,
    )


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values)


def aggregate_turn_metrics(
    method: str,
    turns: Sequence[TurnMetrics],
    readability_label: str | None = None,
    tmr_mode: str = "macro",
) -> MetricsReport:
    """Fold per-turn metrics into one report row.

    ``tmr_mode`` picks macro (mean of per-utterance TMR, the default) or
    micro (pooled over all tokens) aggregation.
    """
    if not turns:
        raise ValueError("cannot aggregate zero turns")
    if tmr_mode == "macro":
        tmr = _mean([t.tmr for t in turns])
    elif tmr_mode == "micro":
        total = sum(t.total_tokens for t in turns)
        tmr = sum(t.cnt_above for t in turns) / total if total else 0.0
    else:
        raise ValueError(f"unknown tmr_mode: {tmr_mode!r}")
    readabilities = [t.readability for t in turns if t.readability is not None]
    return MetricsReport(
        method=method,
        n_utterances=len(turns),
        avg_length=_mean([float(t.length) for t in turns]),
        avg_ppl=_mean([t.ppl for t in turns]),
        div3=_mean([t.div3 for t in turns]),
        readability=_mean(readabilities) if readabilities else None,
        readability_label=readability_label,
        tmr_percent=tmr * 100.0,
        control_error=_mean([t.control_error for t in turns]),
    )


def score_transcript(
    transcript,
    lexicon: LevelLexicon,
    predictor,
    lm,
    user_level: Level,
    readability: ReadabilityScorer | None = None,
    tmr_mode: str = "macro",
) -> tuple[MetricsReport, list[TurnMetrics]]:
    """Aggregate over a transcript's tutor turns; per-turn values retained.

    The tutor is the subject of the evaluation, so student turns are never
    scored. ``transcript`` needs ``spec.method`` and ``turns`` with
    ``role``/``tokens`` fields (the selfchat transcript shape).
    """
    tutor_turns = [t for t in transcript.turns if t.role == "tutor"]
    if not tutor_turns:
        raise ValueError("transcript has no tutor turns")
    per_turn = [
        score_utterance_metrics(t.tokens, lexicon, predictor, lm, user_level, readability)
        for t in tutor_turns
    ]
    label = SURROGATE_READABILITY_LABEL if readability is not None else None
    report = aggregate_turn_metrics(transcript.spec.method, per_turn, label, tmr_mode)
    return report, per_turn


def report_rows_to_csv(reports: Sequence[MetricsReport]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
    writer.writeheader()
    for report in reports:
        row = report.as_row()
        row = {k: ("" if v is None else v) for k, v in row.items()}
        writer.writerow(row)
    return buf.getvalue()


def jsonable_float(value: float | None) -> float | str | None:
    """JSON-safe float: infinities become strings, None passes through."""
    if value is None:
        return None
    if math.isinf(value):
        return "Infinity" if value > 0 else "-Infinity"
    if math.isnan(value):
        return "NaN"
    return value
