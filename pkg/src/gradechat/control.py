"""The four difficulty-control methods.

* ``baseline``      - level word dropped into the tutor prompt, plain sampling
* ``detailed``      - full level description, example dialogue and known-word
                      list in the prompt, plain sampling
* ``overgenerate``  - N independent candidates reranked by estimated TMR
                      against a heuristic lexicon (lowest wins; ties go to the
                      shorter candidate, then the earliest sample)
* ``fudge``         - guided decoding: candidate next tokens are rescored by
                      interpolating the base log-probability with the prefix
                      predictor's log-probability of the target level

Interpolation happens in log-probability space on both sides. Raw logit
scales are not comparable across unrelated models, so log-probs are what
makes the control weight portable; at weight 0 the step is exactly the
base distribution and at weight 1 the ranking is exactly the predictor's.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .classifier import Predictor
from .levels import Level
from .lexicon import LevelLexicon
from .lm import (
    CapabilityError,
    ChatContext,
    LmError,
    NextTokenDistribution,
    TokenCandidate,
    decode_tokens,
    renormalize,
)
from .metrics import token_miss_rate
from .tokenizer import Tokenizer
from .util import derive_seed

METHODS = ("baseline", "detailed", "overgenerate", "fudge")


class MethodError(LmError):
    pass


@dataclass(frozen=True)
class FudgeConfig:
    lambda_: float
    target_level: Level
    top_k: int = 50

    def __post_init__(self) -> None:
        if not 0.0 <= self.lambda_ <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")


@dataclass(frozen=True)
class RerankConfig:
    lexicon: LevelLexicon
    user_level: Level
    n_candidates: int = 5

    def __post_init__(self) -> None:
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")


@dataclass(frozen=True)
class ScoredCandidate:
    index: int
    text: str
    estimated_tmr: float
    token_count: int


def _require_dialogue_context(context: ChatContext) -> None:
    if context.turns:
        last_role, last_text = context.turns[-1]
        if last_role == context.speaker:
            raise MethodError("context already ends with the speaker's own turn")
        if not last_text.strip():
            raise MethodError("partner turn is empty")


def generate_baseline(context: ChatContext, lm) -> str:
    """One completion, no post-processing; the detailed-prompt method differs
    only in the system prompt the context was built with."""
    _require_dialogue_context(context)
    return lm.complete(context)


def rerank_candidates(candidates: Sequence[ScoredCandidate]) -> ScoredCandidate:
    """Lexicographic minimum of (estimated TMR, token count, sample index)."""
    if not candidates:
        raise MethodError("no candidates to rerank")
    return min(candidates, key=lambda c: (c.estimated_tmr, c.token_count, c.index))


def generate_overgenerate(
    context: ChatContext,
    lm,
    cfg: RerankConfig,
    tokenizer: Tokenizer,
) -> tuple[str, list[ScoredCandidate]]:
    """Sample N candidates on derived seeds, keep the most comprehensible one.

    All candidates and their scores are returned so a run can be audited.
    """
    _require_dialogue_context(context)
    base_seed = context.generation.seed
    scored: list[ScoredCandidate] = []
    for i in range(cfg.n_candidates):
        seed = derive_seed(base_seed, "overgenerate", i) if base_seed is not None else None
        text = lm.complete(context.with_generation(context.generation.with_seed(seed)))
        if not text:
            continue
        utterance = tokenizer.tokenize(text)
        breakdown = token_miss_rate(utterance, cfg.lexicon, cfg.user_level)
        scored.append(ScoredCandidate(i, text, breakdown.tmr, len(utterance.tokens)))
    if not scored:
        raise MethodError("all overgenerate candidates were empty")
    return rerank_candidates(scored).text, scored


def fudge_step(
    base: NextTokenDistribution,
    predictor: Predictor,
    prefix: Sequence[str],
    cfg: FudgeConfig,
    state=None,
) -> NextTokenDistribution:
    """Interpolate base candidate scores with the predictor's target score.

    For each candidate token, the predictor scores the prefix extended by
    that token; the mixed score is ``lambda * a + (1 - lambda) * x``. The
    result is renormalized over the k candidates. With lambda == 0 the
    predictor is never consulted, so the step is the exact renormalized
    base distribution.
    """
    if len(base.candidates) > cfg.top_k:
        raise ValueError(
            f"base distribution wider ({len(base.candidates)}) than top_k ({cfg.top_k})"
        )
    if cfg.lambda_ == 0.0:
        return renormalize(base)
    if state is None:
        state = predictor.prefix_state(prefix)
    texts = [c.text for c in base.candidates]
    target_col = cfg.target_level.value - 1
    scores = state.extension_log_probs(texts)[:, target_col]
    mixed = sorted(
        (
            TokenCandidate(
                c.token_id,
                c.text,
                cfg.lambda_ * max(float(a), -1e6) + (1.0 - cfg.lambda_) * c.log_prob,
            )
            for c, a in zip(base.candidates, scores)
        ),
        key=lambda c: (-c.log_prob, c.token_id),
    )
    return renormalize(NextTokenDistribution(tuple(mixed), k=base.k, renormalized=False))


def generate_fudge(
    context: ChatContext,
    lm,
    predictor: Predictor,
    cfg: FudgeConfig,
) -> str:
    """Autoregressive guided decoding over truncated next-token distributions."""
    if not hasattr(lm, "next_distribution"):
        raise CapabilityError(
            "provider has no next-token distribution access; guided decoding "
            "needs it - use a prompt-only method instead"
        )
    _require_dialogue_context(context)
    state = predictor.prefix_state()
    pushed = 0

    def step(dist: NextTokenDistribution, prefix: list[str]) -> NextTokenDistribution:
        # Advance the running prefix state by whatever the decode loop has
        # sampled since the last step, then score this step's candidates.
        nonlocal pushed
        while pushed < len(prefix):
            state.push(prefix[pushed])
            pushed += 1
        return fudge_step(dist, predictor, prefix, cfg, state=state)

    out_tokens = decode_tokens(lm, context, k=cfg.top_k, step_fn=step)
    joiner = getattr(lm, "joiner", "")
    return joiner.join(out_tokens)
