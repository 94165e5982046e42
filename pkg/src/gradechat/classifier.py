"""Prefix difficulty predictor.

The predictor estimates, for a *partial* utterance, the distribution over
the difficulty level the *finished* utterance will have. It is trained on
every prefix of each labeled sentence, with per-level downsampling to the
smallest class, and minimizes multi-class cross entropy.

Architecture: learned token embeddings averaged over the prefix feeding a
linear layer with five outputs. That keeps the prefix-training contract and
allows O(1) incremental scoring of candidate extensions (the mean embedding
is a running sum), which guided decoding leans on at every step.

The same model doubles as the whole-utterance difficulty scorer: the score
is the expected level under the predicted distribution, a continuous value
in [1, 5].
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TypeVar

import numpy as np

from .levels import N_LEVELS, Level
from .tokenizer import Tokenizer
from .util import content_digest, stable_json

UNK_INDEX = 0
MODEL_FORMAT = "gradechat-predictor"
MODEL_VERSION = 1

T = TypeVar("T")


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True)
class PrefixExample:
    prefix: tuple[str, ...]
    label: Level

    def __post_init__(self) -> None:
        if len(self.prefix) < 1:
            raise ClassifierError("prefix must contain at least one token")


@dataclass(frozen=True)
class DifficultyDistribution:
    """Log-probabilities over the five levels; exp-sum is 1 within 1e-9."""

    log_probs: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.log_probs) != N_LEVELS:
            raise ClassifierError(f"need {N_LEVELS} log-probs, got {len(self.log_probs)}")
        total = float(np.exp(np.asarray(self.log_probs)).sum())
        if abs(total - 1.0) > 1e-9:
            raise ClassifierError(f"distribution sums to {total}")

    def prob(self, level: Level) -> float:
        return float(np.exp(self.log_probs[level.value - 1]))

    @property
    def argmax_level(self) -> Level:
        return Level(int(np.argmax(self.log_probs)) + 1)

    @property
    def expected_level(self) -> float:
        probs = np.exp(np.asarray(self.log_probs))
        return float(np.dot(probs, np.arange(1, N_LEVELS + 1)))


def expand_prefixes(sentence: Sequence[str], label: Level) -> list[PrefixExample]:
    """All prefixes of a sentence, each labeled with the full sentence's level."""
    tokens = tuple(sentence)
    if len(tokens) < 1:
        raise ClassifierError("cannot expand an empty sentence")
    return [PrefixExample(tokens[: i + 1], label) for i in range(len(tokens))]


def balance_by_downsampling(
    groups: Mapping[Level, Sequence[T]],
    seed: int,
) -> dict[Level, list[T]]:
    """Uniform, seeded, without-replacement downsampling to the smallest group."""
    for level, items in groups.items():
        if len(items) == 0:
            raise ClassifierError(f"no examples for level {level}")
    floor = min(len(items) for items in groups.values())
    rng = random.Random(seed)
    balanced: dict[Level, list[T]] = {}
    for level in sorted(groups, key=lambda lv: lv.value):
        items = list(groups[level])
        balanced[level] = rng.sample(items, floor)
    return balanced


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 3
    batch_size: int = 16
    learning_rate: float = 5e-5
    embedding_dim: int = 16
    weight_decay: float = 0.0
    seed: int = 0

    def digest(self) -> str:
        return content_digest(stable_json(self.__dict__))


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


@dataclass
class Parameters:
    embeddings: np.ndarray  # (V + 1, d); row 0 is the unknown-token embedding
    weights: np.ndarray     # (5, d)
    bias: np.ndarray        # (5,)

    def copy(self) -> "Parameters":
        return Parameters(self.embeddings.copy(), self.weights.copy(), self.bias.copy())


def loss_and_grad(
    params: Parameters,
    encoded: Sequence[tuple[np.ndarray, int]],
) -> tuple[float, Parameters]:
    """Summed cross-entropy loss and its exact gradient.

    ``encoded`` items are (token index array, zero-based label). Kept as a
    standalone function so the finite-difference check can probe it directly.
    """
    d_emb = np.zeros_like(params.embeddings)
    d_w = np.zeros_like(params.weights)
    d_b = np.zeros_like(params.bias)
    loss = 0.0
    for indices, label in encoded:
        h = params.embeddings[indices].mean(axis=0)
        logits = params.weights @ h + params.bias
        log_probs = _log_softmax(logits)
        loss -= float(log_probs[label])
        dlogits = np.exp(log_probs)
        dlogits[label] -= 1.0
        d_w += np.outer(dlogits, h)
        d_b += dlogits
        dh = params.weights.T @ dlogits
        np.add.at(d_emb, indices, dh / len(indices))
    return loss, Parameters(d_emb, d_w, d_b)


class PrefixState:
    """Running embedding sum over a prefix; extension scoring is O(k).

    The prefix may start empty: scoring always happens on extensions, which
    are non-empty by construction.
    """

    def __init__(self, predictor: "Predictor", prefix: Sequence[str] = ()) -> None:
        self._predictor = predictor
        if prefix:
            indices = predictor.encode(prefix)
            self._sum = predictor.params.embeddings[indices].sum(axis=0)
            self._count = len(indices)
        else:
            self._sum = np.zeros(predictor.params.embeddings.shape[1])
            self._count = 0

    def push(self, token: str) -> None:
        idx = self._predictor.vocab.get(token, UNK_INDEX)
        self._sum = self._sum + self._predictor.params.embeddings[idx]
        self._count += 1

    def extension_log_probs(self, tokens: Sequence[str]) -> np.ndarray:
        """(len(tokens), 5) log-probs for the prefix extended by each token."""
        p = self._predictor.params
        ids = np.array([self._predictor.vocab.get(t, UNK_INDEX) for t in tokens])
        h = (self._sum[None, :] + p.embeddings[ids]) / (self._count + 1)
        logits = h @ p.weights.T + p.bias
        return _log_softmax(logits)


class Predictor:
    """Immutable trained model; safe for concurrent prediction."""

    def __init__(
        self,
        vocab: Mapping[str, int],
        params: Parameters,
        config: TrainingConfig,
        tokenizer: Tokenizer | None = None,
        epoch_losses: Sequence[float] = (),
    ) -> None:
        self.vocab = dict(vocab)
        self.params = params
        self.config = config
        self.tokenizer = tokenizer
        self.epoch_losses = list(epoch_losses)

    def encode(self, tokens: Sequence[str]) -> np.ndarray:
        if len(tokens) < 1:
            raise ClassifierError("prefix must contain at least one token")
        return np.array([self.vocab.get(t, UNK_INDEX) for t in tokens])

    def log_probs(self, prefix: Sequence[str]) -> np.ndarray:
        indices = self.encode(prefix)
        h = self.params.embeddings[indices].mean(axis=0)
        logits = self.params.weights @ h + self.params.bias
        return _log_softmax(logits)

    def predict_prefix(self, prefix: Sequence[str]) -> DifficultyDistribution:
        return DifficultyDistribution(tuple(float(x) for x in self.log_probs(prefix)))

    def prefix_state(self, prefix: Sequence[str] = ()) -> PrefixState:
        return PrefixState(self, prefix)

    def score_tokens(self, tokens: Sequence[str]) -> float:
        return self.predict_prefix(tokens).expected_level

    def score_utterance(self, text: str) -> float:
        """Expected level of the full utterance, continuous in [1, 5]."""
        if self.tokenizer is None:
            raise ClassifierError("predictor has no tokenizer attached")
        lemmas = self.tokenizer.tokenize(text).lemmas
        if not lemmas:
            raise ClassifierError(f"text tokenizes to nothing: {text!r}")
        return self.score_tokens(lemmas)

    # -- persistence ---------------------------------------------------------

    def save(self, path: str | Path) -> None:
        meta = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "embedding_dim": int(self.params.embeddings.shape[1]),
            "vocab": sorted(self.vocab, key=self.vocab.get),
            "config_digest": self.config.digest(),
            "config": self.config.__dict__,
            "epoch_losses": self.epoch_losses,
        }
        np.savez(
            path,
            embeddings=self.params.embeddings,
            weights=self.params.weights,
            bias=self.params.bias,
            meta=np.array(json.dumps(meta, ensure_ascii=False)),
        )

    @classmethod
    def load(cls, path: str | Path, tokenizer: Tokenizer | None = None) -> "Predictor":
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != MODEL_FORMAT:
            raise ClassifierError(f"not a predictor file: {path}")
        if meta.get("version") != MODEL_VERSION:
            raise ClassifierError(f"unsupported predictor version: {meta.get('version')}")
        vocab = {tok: i for i, tok in enumerate(meta["vocab"])}
        params = Parameters(data["embeddings"], data["weights"], data["bias"])
        config = TrainingConfig(**meta["config"])
        return cls(vocab, params, config, tokenizer, meta.get("epoch_losses", []))


def _build_vocab(examples: Iterable[PrefixExample]) -> dict[str, int]:
    tokens = sorted({tok for ex in examples for tok in ex.prefix})
    vocab = {"<unk>": UNK_INDEX}
    for tok in tokens:
        vocab[tok] = len(vocab)
    return vocab


def train(
    examples: Sequence[PrefixExample],
    config: TrainingConfig = TrainingConfig(),
    tokenizer: Tokenizer | None = None,
) -> Predictor:
    """Mini-batch gradient descent on the summed cross-entropy loss."""
    if not examples:
        raise ClassifierError("no training examples")
    labels = {ex.label for ex in examples}
    if len(labels) < 2:
        raise ClassifierError("training needs at least two distinct labels")

    vocab = _build_vocab(examples)
    rng = np.random.default_rng(config.seed)
    embeddings = rng.normal(0.0, 0.1, size=(len(vocab), config.embedding_dim))
    embeddings[UNK_INDEX] = 0.0  # unseen tokens carry no difficulty evidence
    params = Parameters(
        embeddings=embeddings,
        weights=np.zeros((N_LEVELS, config.embedding_dim)),
        bias=np.zeros(N_LEVELS),
    )
    encoded = [
        (np.array([vocab.get(t, UNK_INDEX) for t in ex.prefix]), ex.label.value - 1)
        for ex in examples
    ]

    order = np.arange(len(encoded))
    epoch_losses: list[float] = []
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [encoded[i] for i in order[start : start + config.batch_size]]
            loss, grad = loss_and_grad(params, batch)
            total += loss
            scale = config.learning_rate / len(batch)
            if config.weight_decay:
                decay = 1.0 - scale * config.weight_decay
                params.embeddings *= decay
                params.weights *= decay
            params.embeddings -= scale * grad.embeddings
            params.weights -= scale * grad.weights
            params.bias -= scale * grad.bias
        epoch_losses.append(total / len(encoded))
    return Predictor(vocab, params, config, tokenizer, epoch_losses)


def train_from_corpus(
    sentences: Iterable[tuple[str, Level]],
    tokenizer: Tokenizer,
    config: TrainingConfig = TrainingConfig(),
) -> Predictor:
    """Tokenize, balance sentences per level, expand prefixes, train.

    Balancing happens on sentences (before prefix expansion) so that long
    sentences cannot dominate a level's example budget.
    """
    grouped: dict[Level, list[tuple[str, ...]]] = {}
    for text, level in sentences:
        lemmas = tuple(tokenizer.tokenize(text).lemmas)
        if lemmas:
            grouped.setdefault(level, []).append(lemmas)
    if not grouped:
        raise ClassifierError("corpus tokenized to nothing")
    balanced = balance_by_downsampling(grouped, seed=config.seed)
    examples = [
        ex
        for level, sents in sorted(balanced.items(), key=lambda kv: kv[0].value)
        for sent in sents
        for ex in expand_prefixes(sent, level)
    ]
    return train(examples, config, tokenizer)
