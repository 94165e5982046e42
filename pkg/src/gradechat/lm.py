"""Language-model providers behind one small interface.

Providers expose two operations: ``complete`` (one assistant utterance for a
chat context) and, when the provider can, ``next_distribution`` (truncated
next-token candidates with log-probabilities). Guided decoding needs the
latter, so providers without logprob access raise :class:`CapabilityError`
and are restricted to prompt-only methods.

The built-in provider is an additively smoothed n-gram model over lemma
tokens: full distribution access, deterministic under a seed, and cheap
enough to drive the whole evaluation pipeline on a desk.
"""
from __future__ import annotations

import json
import math
import os
import random
import threading
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .util import stable_json


class LmError(RuntimeError):
    pass


class CapabilityError(LmError):
    """The provider cannot serve this request (e.g. no logprob access)."""


class AuthError(LmError):
    pass


@dataclass
class TransportError(LmError):
    message: str
    retryable: bool = True
    attempts: int = 1
    retry_after: float | None = None

    def __str__(self) -> str:
        return f"{self.message} (attempts={self.attempts}, retryable={self.retryable})"


@dataclass(frozen=True)
class GenerationConfig:
    temperature: float = 0.7
    top_p: float = 0.8
    top_k: int = 20
    repetition_penalty: float = 1.05
    max_tokens: int = 64
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.repetition_penalty < 1:
            raise ValueError("repetition_penalty must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")

    @classmethod
    def tutor_default(cls, **overrides) -> "GenerationConfig":
        return cls(**overrides)

    @classmethod
    def student_default(cls, **overrides) -> "GenerationConfig":
        # Student agents sample with a full nucleus for response diversity.
        overrides.setdefault("top_p", 1.0)
        return cls(**overrides)

    def with_seed(self, seed: int | None) -> "GenerationConfig":
        return replace(self, seed=seed)


STUDENT = "student"
TUTOR = "tutor"
_ROLES = (STUDENT, TUTOR)


@dataclass
class ChatContext:
    """System prompt plus alternating (role, text) turns for one speaker.

    ``speaker`` names the role the next completion is generated for; remote
    providers map the speaker's own turns to assistant messages and the
    partner's to user messages.
    """

    system_prompt: str
    speaker: str = TUTOR
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    turns: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.speaker not in _ROLES:
            raise ValueError(f"speaker must be one of {_ROLES}, got {self.speaker!r}")
        for role, _ in self.turns:
            if role not in _ROLES:
                raise ValueError(f"bad turn role: {role!r}")
        self._check_alternation(self.turns)

    @staticmethod
    def _check_alternation(turns: Sequence[tuple[str, str]]) -> None:
        for (prev, _), (cur, _) in zip(turns, turns[1:]):
            if prev == cur:
                raise ValueError("turn roles must alternate")

    def add_turn(self, role: str, text: str) -> None:
        if role not in _ROLES:
            raise ValueError(f"bad turn role: {role!r}")
        if self.turns and self.turns[-1][0] == role:
            raise ValueError("turn roles must alternate")
        self.turns.append((role, text))

    def with_generation(self, generation: GenerationConfig) -> "ChatContext":
        return ChatContext(
            system_prompt=self.system_prompt,
            speaker=self.speaker,
            generation=generation,
            turns=list(self.turns),
        )


@dataclass(frozen=True)
class TokenCandidate:
    token_id: int
    text: str
    log_prob: float


@dataclass(frozen=True)
class NextTokenDistribution:
    """Top-k candidates, log-probs non-increasing, ties broken by token_id."""

    candidates: tuple[TokenCandidate, ...]
    k: int
    renormalized: bool = False

    def __post_init__(self) -> None:
        if len(self.candidates) > self.k:
            raise ValueError("more candidates than truncation width k")
        prev = math.inf
        for cand in self.candidates:
            if not math.isfinite(cand.log_prob):
                raise ValueError(f"non-finite log_prob for {cand.text!r}")
            if cand.log_prob > prev:
                raise ValueError("log_probs must be non-increasing")
            prev = cand.log_prob
        if self.renormalized:
            total = sum(math.exp(c.log_prob) for c in self.candidates)
            if abs(total - 1.0) > 1e-9:
                raise ValueError(f"renormalized distribution sums to {total}")

    @property
    def texts(self) -> list[str]:
        return [c.text for c in self.candidates]


def _sorted_candidates(cands: Iterable[TokenCandidate]) -> tuple[TokenCandidate, ...]:
    return tuple(sorted(cands, key=lambda c: (-c.log_prob, c.token_id)))


def renormalize(dist: NextTokenDistribution) -> NextTokenDistribution:
    lse = math.log(sum(math.exp(c.log_prob) for c in dist.candidates))
    cands = [TokenCandidate(c.token_id, c.text, c.log_prob - lse) for c in dist.candidates]
    return NextTokenDistribution(_sorted_candidates(cands), k=dist.k, renormalized=True)


def apply_sampling_adjustments(
    dist: NextTokenDistribution,
    history: Sequence[str],
    gen: GenerationConfig,
) -> NextTokenDistribution:
    """Repetition penalty then temperature, in log-prob space, unnormalized.

    Penalty convention: scores of already-emitted tokens are divided by the
    penalty when positive and multiplied when negative (log-probs are <= 0,
    so seen tokens always get less likely).
    """
    seen = set(history)
    out = []
    for c in dist.candidates:
        lp = c.log_prob
        if c.text in seen and gen.repetition_penalty != 1.0:
            lp = lp / gen.repetition_penalty if lp > 0 else lp * gen.repetition_penalty
        lp = lp / gen.temperature
        out.append(TokenCandidate(c.token_id, c.text, lp))
    return NextTokenDistribution(_sorted_candidates(out), k=dist.k, renormalized=False)


def nucleus_filter(dist: NextTokenDistribution, top_p: float) -> NextTokenDistribution:
    """Keep the smallest probability-sorted prefix reaching top_p, renormalized."""
    if top_p >= 1.0:
        return dist
    kept = []
    cum = 0.0
    for c in dist.candidates:
        kept.append(c)
        cum += math.exp(c.log_prob)
        if cum >= top_p:
            break
    return renormalize(NextTokenDistribution(tuple(kept), k=dist.k, renormalized=False))


def sample_candidate(dist: NextTokenDistribution, rng: random.Random) -> TokenCandidate:
    u = rng.random()
    cum = 0.0
    for cand in dist.candidates:
        cum += math.exp(cand.log_prob)
        if u <= cum:
            return cand
    return dist.candidates[-1]


SENTENCE_FINAL = frozenset({"。", "！", "？", "!", "?", "."})
MIN_TOKENS_BEFORE_STOP = 3

StepFn = Callable[[NextTokenDistribution, list[str]], NextTokenDistribution]


def decode_tokens(
    lm,
    context: ChatContext,
    k: int,
    step_fn: StepFn | None = None,
) -> list[str]:
    """Shared autoregressive loop for the built-in provider.

    ``step_fn`` may replace the adjusted distribution (it must return a
    renormalized one); without it the loop renormalizes itself, so a step_fn
    that is an identity produces byte-identical samples to plain decoding.
    """
    gen = context.generation
    rng = random.Random(gen.seed)
    tokens: list[str] = []
    for _ in range(gen.max_tokens):
        dist = lm.next_distribution(context, tokens, k)
        dist = apply_sampling_adjustments(dist, tokens, gen)
        dist = step_fn(dist, tokens) if step_fn is not None else renormalize(dist)
        dist = nucleus_filter(dist, gen.top_p)
        cand = sample_candidate(dist, rng)
        tokens.append(cand.text)
        if len(tokens) >= MIN_TOKENS_BEFORE_STOP and cand.text in SENTENCE_FINAL:
            break
    return tokens


# --------------------------------------------------------------------------
# Built-in n-gram provider
# --------------------------------------------------------------------------

NGRAM_FORMAT = "gradechat-ngram"
NGRAM_VERSION = 1
_HISTORY_SEP = "\x1f"


class NgramLM:
    """Additively smoothed n-gram model over lemma tokens.

    ``P(w | h) = (count(h, w) + delta) / (count(h, *) + delta * |V|)`` with
    the longest available history of up to ``order - 1`` tokens; unseen
    histories therefore fall back to the uniform ``1 / |V|``. Immutable
    after training and safe for concurrent reads.
    """

    def __init__(
        self,
        order: int,
        delta: float,
        vocab: Sequence[str],
        continuations: dict[tuple[str, ...], Counter] | None = None,
        joiner: str = "",
    ) -> None:
        if order < 1:
            raise ValueError("order must be >= 1")
        if delta <= 0:
            raise ValueError("smoothing delta must be positive")
        if not vocab:
            raise ValueError("empty vocabulary")
        self.order = order
        self.delta = delta
        self.vocab: tuple[str, ...] = tuple(sorted(set(vocab)))
        self.token_ids = {tok: i for i, tok in enumerate(self.vocab)}
        self.joiner = joiner
        self._cont: dict[tuple[str, ...], Counter] = continuations or {}
        self._cont_totals = {h: sum(c.values()) for h, c in self._cont.items()}

    @classmethod
    def uniform(cls, vocab: Sequence[str], joiner: str = "") -> "NgramLM":
        return cls(order=1, delta=1.0, vocab=vocab, continuations={}, joiner=joiner)

    def _history(self, tokens: Sequence[str]) -> tuple[str, ...]:
        width = self.order - 1
        if width <= 0:
            return ()
        return tuple(tokens[-width:]) if len(tokens) >= width else tuple(tokens)

    def token_prob(self, history: Sequence[str], token: str) -> float:
        if token not in self.token_ids:
            return 0.0
        h = tuple(history)
        count = self._cont.get(h, Counter())[token] if h in self._cont else 0
        total = self._cont_totals.get(h, 0)
        return (count + self.delta) / (total + self.delta * len(self.vocab))

    def token_log_prob(self, history: Sequence[str], token: str) -> float:
        p = self.token_prob(history, token)
        return math.log(p) if p > 0 else -math.inf

    def sequence_log_probs(self, tokens: Sequence[str]) -> list[float]:
        out = []
        for i, tok in enumerate(tokens):
            h = self._history(tokens[:i])
            out.append(self.token_log_prob(h, tok))
        return out

    def next_distribution(
        self,
        context: ChatContext | None,
        prefix_tokens: Sequence[str],
        k: int,
    ) -> NextTokenDistribution:
        if k < 1:
            raise ValueError("k must be >= 1")
        h = self._history(list(prefix_tokens))
        counter = self._cont.get(h, Counter())
        total = self._cont_totals.get(h, 0)
        denom = total + self.delta * len(self.vocab)
        scored = [
            TokenCandidate(tid, tok, math.log((counter[tok] + self.delta) / denom))
            for tok, tid in self.token_ids.items()
        ]
        top = _sorted_candidates(scored)[: min(k, len(scored))]
        return NextTokenDistribution(candidates=top, k=k, renormalized=False)

    def complete(self, context: ChatContext) -> str:
        if not context.system_prompt and not context.turns:
            raise LmError("empty chat context")
        tokens = decode_tokens(self, context, k=context.generation.top_k)
        return self.joiner.join(tokens)

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        payload = {
            "format": NGRAM_FORMAT,
            "version": NGRAM_VERSION,
            "order": self.order,
            "delta": self.delta,
            "joiner": self.joiner,
            "vocab": list(self.vocab),
            "continuations": {
                _HISTORY_SEP.join(h): dict(sorted(counter.items()))
                for h, counter in sorted(self._cont.items())
            },
        }
        Path(path).write_text(stable_json(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "NgramLM":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("format") != NGRAM_FORMAT:
            raise LmError(f"not an n-gram model file: {path}")
        if payload.get("version") != NGRAM_VERSION:
            raise LmError(f"unsupported n-gram model version: {payload.get('version')}")
        continuations = {
            tuple(h.split(_HISTORY_SEP)) if h else (): Counter(counts)
            for h, counts in payload["continuations"].items()
        }
        return cls(
            order=payload["order"],
            delta=payload["delta"],
            vocab=payload["vocab"],
            continuations=continuations,
            joiner=payload.get("joiner", ""),
        )


def train_ngram(
    corpus: Iterable[str],
    order: int,
    smoothing: float = 1.0,
    joiner: str = "",
) -> NgramLM:
    """Count continuations for every history length 0..order-1 over a flat stream."""
    stream = list(corpus)
    if not stream:
        raise LmError("empty training corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    cont: dict[tuple[str, ...], Counter] = {}
    for i, token in enumerate(stream):
        for width in range(min(order - 1, i) + 1):
            h = tuple(stream[i - width : i])
            cont.setdefault(h, Counter())[token] += 1
    return NgramLM(order=order, delta=smoothing, vocab=stream, continuations=cont, joiner=joiner)


def perplexity(model, tokens: Sequence[str]) -> float:
    """exp(mean negative log-likelihood); ``inf`` when any token has zero mass."""
    if len(tokens) < 1:
        raise ValueError("perplexity needs at least one token")
    log_probs = model.sequence_log_probs(tokens)
    if any(lp == -math.inf for lp in log_probs):
        return math.inf
    return math.exp(-sum(log_probs) / len(log_probs))


# --------------------------------------------------------------------------
# Remote provider (OpenAI-compatible chat completions)
# --------------------------------------------------------------------------

DEFAULT_CREDENTIAL_VAR = "GRADECHAT_API_KEY"


def _messages_for(context: ChatContext) -> list[dict[str, str]]:
    messages = [{"role": "system", "content": context.system_prompt}]
    for role, text in context.turns:
        wire_role = "assistant" if role == context.speaker else "user"
        messages.append({"role": wire_role, "content": text})
    return messages


class RemoteChatLM:
    """Client for an OpenAI-compatible /chat/completions endpoint.

    Distribution access is best effort: the request asks for top logprobs,
    and providers that do not return them get a :class:`CapabilityError`
    telling the caller to stick to prompt-only methods. In-flight requests
    are bounded and transport failures retry with exponential backoff.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        credential_var: str = DEFAULT_CREDENTIAL_VAR,
        api_key: str | None = None,
        max_inflight: int = 4,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        logprob_width: int = 20,
        transport=None,
        sleep=time.sleep,
    ) -> None:
        import httpx

        self.model = model
        self.logprob_width = logprob_width
        self._key = api_key if api_key is not None else os.environ.get(credential_var, "")
        self._credential_var = credential_var
        self._sem = threading.Semaphore(max_inflight)
        self._max_retries = max_retries
        self._backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(base_url=base_url.rstrip("/"), transport=transport, timeout=60.0)

    def _post(self, payload: dict) -> dict:
        import httpx

        headers = {"Authorization": f"Bearer {self._key}"}
        last_exc: Exception | None = None
        for attempt in range(1, self._max_retries + 1):
            with self._sem:
                try:
                    resp = self._client.post("/chat/completions", json=payload, headers=headers)
                except httpx.HTTPError as exc:
                    last_exc = exc
                    if attempt < self._max_retries:
                        self._sleep(self._backoff_base * 2 ** (attempt - 1))
                    continue
            if resp.status_code in (401, 403):
                raise AuthError(
                    f"provider rejected credentials from ${self._credential_var} "
                    f"(HTTP {resp.status_code})"
                )
            if resp.status_code >= 500 or resp.status_code == 429:
                last_exc = LmError(f"HTTP {resp.status_code}")
                if attempt < self._max_retries:
                    self._sleep(self._backoff_base * 2 ** (attempt - 1))
                continue
            if resp.status_code != 200:
                raise LmError(f"provider error HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(
            message=f"chat completion failed after retries: {last_exc}",
            retryable=True,
            attempts=self._max_retries,
        )

    def complete(self, context: ChatContext) -> str:
        if not context.system_prompt and not context.turns:
            raise LmError("empty chat context")
        gen = context.generation
        payload = {
            "model": self.model,
            "messages": _messages_for(context),
            "temperature": gen.temperature,
            "top_p": gen.top_p,
            "max_tokens": gen.max_tokens,
        }
        if gen.seed is not None:
            payload["seed"] = gen.seed
        data = self._post(payload)
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LmError(f"malformed completion response: {data!r}") from exc

    def next_distribution(
        self,
        context: ChatContext,
        prefix_tokens: Sequence[str],
        k: int,
    ) -> NextTokenDistribution:
        if k < 1:
            raise ValueError("k must be >= 1")
        width = min(k, self.logprob_width)
        messages = _messages_for(context)
        if prefix_tokens:
            messages.append({"role": "assistant", "content": "".join(prefix_tokens)})
        payload = {
            "model": self.model,
            "messages": messages,
            "max_tokens": 1,
            "logprobs": True,
            "top_logprobs": width,
        }
        data = self._post(payload)
        try:
            content = data["choices"][0]["logprobs"]["content"]
            top = content[0]["top_logprobs"]
        except (KeyError, IndexError, TypeError):
            raise CapabilityError(
                "provider did not return token logprobs; guided decoding is "
                "unavailable - use the prompt-only methods (baseline, detailed, "
                "overgenerate)"
            ) from None
        cands = [
            TokenCandidate(token_id=i, text=item["token"], log_prob=float(item["logprob"]))
            for i, item in enumerate(top[:width])
        ]
        return NextTokenDistribution(_sorted_candidates(cands), k=k, renormalized=False)

    def close(self) -> None:
        self._client.close()
