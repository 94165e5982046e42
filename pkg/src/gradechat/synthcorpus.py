"""Synthetic two-register corpus: the desk-scale stand-in for real data.

Real vocabulary datasets and large chat models are out of scope, so tests,
demos and the built-in service run on a controlled substrate instead: a
vocabulary split into an easy register (binned at the easiest level) and a
hard register (binned at the hardest level). The register corpus trains the
difficulty predictor on pure-register sentences; the base language model is
trained on mixed sentences that skew toward the hard register, mirroring
how an uncontrolled model speaks at near-native difficulty. Whatever gap in
Token Miss Rate a control method achieves against that base is
attributable to the method.
"""
from __future__ import annotations

import random
from dataclasses import dataclass

from .classifier import Predictor, TrainingConfig
from .levels import Level
from .lexicon import DeckCard, LevelLexicon, accumulate_corpus_stats, build_gold_lexicon, derive_heuristic_bins
from .lm import NgramLM, train_ngram
from .tokenizer import DictionaryTokenizer
from .util import derive_seed

EASY_LEMMAS = (
    "ねこ", "いぬ", "やま", "かわ", "はな", "そら", "みず", "ほん", "いえ", "ひと",
    "たべる", "みる", "いく", "はなす", "いい", "おおきい", "きょう", "あした", "ともだち", "がっこう",
)

HARD_LEMMAS = (
    "倹約", "賢明", "鉱業", "護衛", "戸籍", "臆病", "放射能", "洞察", "憂鬱", "逼迫",
    "瑕疵", "斡旋", "乖離", "顕著", "示唆", "包括", "抽象", "媒体", "葛藤", "陳腐",
)

SENTENCE_END = "。"

EASY_LEVEL = Level(1)
HARD_LEVEL = Level(5)


def register_tokenizer() -> DictionaryTokenizer:
    return DictionaryTokenizer(lemmas=EASY_LEMMAS + HARD_LEMMAS)


def register_gold_lexicon() -> LevelLexicon:
    decks = {
        EASY_LEVEL: [DeckCard(lemma, None, "easy register word") for lemma in EASY_LEMMAS],
        HARD_LEVEL: [DeckCard(lemma, None, "hard register word") for lemma in HARD_LEMMAS],
    }
    return build_gold_lexicon(decks)


def _sentence(rng: random.Random, words, length_range=(5, 9)) -> str:
    n = rng.randint(*length_range)
    return "".join(rng.choice(words) for _ in range(n)) + SENTENCE_END


def register_sentences(
    sentences_per_level: int = 120,
    seed: int = 0,
) -> list[tuple[str, Level]]:
    """Pure-register labeled sentences for predictor training."""
    rng = random.Random(derive_seed(seed, "register_sentences"))
    out: list[tuple[str, Level]] = []
    for _ in range(sentences_per_level):
        out.append((_sentence(rng, EASY_LEMMAS), EASY_LEVEL))
        out.append((_sentence(rng, HARD_LEMMAS), HARD_LEVEL))
    return out


def mixed_token_stream(
    n_sentences: int = 3000,
    seed: int = 0,
    hard_fraction: float = 0.7,
) -> list[str]:
    """Token stream for base-LM training, skewed toward the hard register.

    Sentences are terminated with the sentence-end mark so sampling learns
    to stop. The hard skew gives the uncontrolled model a near-native
    baseline miss rate for a beginner-level target.
    """
    rng = random.Random(derive_seed(seed, "mixed_stream"))
    stream: list[str] = []
    for _ in range(n_sentences):
        n = rng.randint(4, 6)
        for _ in range(n):
            pool = HARD_LEMMAS if rng.random() < hard_fraction else EASY_LEMMAS
            stream.append(rng.choice(pool))
        stream.append(SENTENCE_END)
    return stream


def register_heuristic_lexicon(seed: int = 0) -> LevelLexicon:
    """Heuristic bins recovered from the register corpus itself."""
    tokenizer = register_tokenizer()
    stats = accumulate_corpus_stats(register_sentences(seed=seed), tokenizer)
    return derive_heuristic_bins(stats)


DEMO_TRAINING = TrainingConfig(
    epochs=3,
    batch_size=16,
    learning_rate=0.12,
    embedding_dim=12,
    seed=7,
)


def train_register_predictor(
    seed: int = 0,
    training: TrainingConfig = DEMO_TRAINING,
) -> Predictor:
    """Predictor over register sentences with the sentence-end mark kept.

    The end mark occurs equally in both registers, so it learns a
    class-neutral embedding; were it out of vocabulary, guided decoding
    would systematically distort where utterances stop.
    """
    from .classifier import balance_by_downsampling, expand_prefixes, train

    tokenizer = register_tokenizer()
    grouped: dict[Level, list[tuple[str, ...]]] = {}
    for text, level in register_sentences(seed=seed):
        tokens = tuple(tokenizer.tokenize(text).lemmas) + (SENTENCE_END,)
        grouped.setdefault(level, []).append(tokens)
    balanced = balance_by_downsampling(grouped, seed=training.seed)
    examples = [
        ex
        for level, sents in sorted(balanced.items(), key=lambda kv: kv[0].value)
        for sent in sents
        for ex in expand_prefixes(sent, level)
    ]
    return train(examples, training, tokenizer)


@dataclass(frozen=True)
class DemoBundle:
    """Everything the engine needs, trained on the synthetic registers."""

    lm: NgramLM
    predictor: Predictor
    tokenizer: DictionaryTokenizer
    gold_lexicon: LevelLexicon
    heuristic_lexicon: LevelLexicon


def build_demo_bundle(seed: int = 0, training: TrainingConfig = DEMO_TRAINING) -> DemoBundle:
    tokenizer = register_tokenizer()
    lm = train_ngram(mixed_token_stream(seed=seed), order=2, smoothing=0.2)
    predictor = train_register_predictor(seed=seed, training=training)
    return DemoBundle(
        lm=lm,
        predictor=predictor,
        tokenizer=tokenizer,
        gold_lexicon=register_gold_lexicon(),
        heuristic_lexicon=register_heuristic_lexicon(seed=seed),
    )
