"""Leveled vocabularies: the ground truth behind Token Miss Rate.

Two builders produce the same immutable :class:`LevelLexicon` type:

* :func:`build_gold_lexicon` parses flashcard dumps (normalization plus
  parenthetical/reading expansion heuristics) into gold bins.
* :func:`derive_heuristic_bins` assigns corpus tokens to the first level,
  scanning easiest to hardest, where their within-level relative frequency
  clears a threshold, after global and per-level rare-word floors.

Lookups are exact-match over NFKC-normalized lemmas; absent lemmas are
reported as ``UNBINNED``, never as an error.
"""
from __future__ import annotations

import json
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .levels import LEVELS, UNBINNED, Level, _Unbinned
from .tokenizer import Tokenizer
from .util import content_digest, stable_json

GOLD_DECK = "gold_deck"
CORPUS_HEURISTIC = "corpus_heuristic"

DEFAULT_FREQUENCY_FLOOR = 1e-6


class LexiconError(ValueError):
    pass


def normalize_lemma(text: str) -> str:
    return unicodedata.normalize("NFKC", text).strip()


@dataclass(frozen=True)
class LexiconEntry:
    lemma: str
    level: Level | None = None
    meaning: str | None = None

    def __post_init__(self) -> None:
        if not self.lemma:
            raise LexiconError("empty lemma")
        if "\t" in self.lemma or "\n" in self.lemma:
            raise LexiconError(f"lemma contains tab/newline: {self.lemma!r}")


@dataclass(frozen=True)
class LevelLexicon:
    """Immutable lemma -> level map; safe for unrestricted concurrent reads."""

    entries: Mapping[str, LexiconEntry]
    provenance: str
    source_digest: str

    def lookup(self, lemma: str) -> Level | _Unbinned:
        entry = self.entries.get(normalize_lemma(lemma))
        if entry is None or entry.level is None:
            return UNBINNED
        return entry.level

    def lemmas_at(self, level: Level) -> list[str]:
        return sorted(l for l, e in self.entries.items() if e.level == level)

    def __len__(self) -> int:
        return len(self.entries)


def lookup(lexicon: LevelLexicon, lemma: str) -> Level | _Unbinned:
    return lexicon.lookup(lemma)


# --------------------------------------------------------------------------
# Gold decks
# --------------------------------------------------------------------------

_TILDE_CHARS = "〜～~"  # wave dash, fullwidth tilde, ASCII tilde
_PAREN_TRANS = str.maketrans({"（": "(", "）": ")"})


def _is_single_hiragana(text: str) -> bool:
    return len(text) == 1 and 0x3040 <= ord(text) <= 0x309F


def _expand_parenthetical(text: str) -> list[str]:
    """"話す(こと)" -> ["話す", "話すこと"]; text without parens passes through."""
    if "(" not in text:
        return [text]
    outside: list[str] = []
    full: list[str] = []
    depth = 0
    balanced = True
    for ch in text:
        if ch == "(":
            depth += 1
            if depth > 1:
                balanced = False
        elif ch == ")":
            depth -= 1
            if depth < 0:
                balanced = False
        else:
            full.append(ch)
            if depth == 0:
                outside.append(ch)
    if not balanced or depth != 0:
        return [text]
    forms = ["".join(outside).strip(), "".join(full).strip()]
    deduped: list[str] = []
    for form in forms:
        if form and form not in deduped:
            deduped.append(form)
    return deduped


def _normalize_card_field(raw: str) -> str:
    text = normalize_lemma(raw).translate(_PAREN_TRANS)
    for tilde in _TILDE_CHARS:
        text = text.replace(tilde, "")
    return text.strip()


def parse_deck_entry(
    raw_expression: str,
    raw_reading: str | None,
    gloss: str,
) -> list[LexiconEntry]:
    """Normalize one flashcard into zero or more (lemma, meaning) entries.

    Malformed cards (no expression or no gloss once trimmed) are skipped by
    returning the empty list; a bad card never aborts a batch. Readings are
    added behind two filters: single-hiragana readings are dropped, as is
    any reading that duplicates an already-produced alternative form.
    """
    meaning = (gloss or "").strip()
    expression = _normalize_card_field(raw_expression or "")
    if not expression or not meaning:
        return []

    entries: list[LexiconEntry] = []
    seen: set[str] = set()
    for form in _expand_parenthetical(expression):
        if form and form not in seen:
            seen.add(form)
            entries.append(LexiconEntry(lemma=form, meaning=meaning))

    if raw_reading:
        reading = _normalize_card_field(raw_reading)
        if reading:
            for form in _expand_parenthetical(reading):
                if not form or form in seen or _is_single_hiragana(form):
                    continue
                seen.add(form)
                entries.append(LexiconEntry(lemma=form, meaning=meaning))
    return entries


@dataclass(frozen=True)
class DeckCard:
    expression: str
    reading: str | None
    gloss: str


def load_deck_tsv(path: str | Path) -> list[DeckCard]:
    """Read ``expression<TAB>reading<TAB>gloss`` rows; reading may be empty."""
    cards = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        fields = line.split("\t")
        expression = fields[0] if fields else ""
        reading = fields[1] if len(fields) > 1 else ""
        gloss = fields[2] if len(fields) > 2 else ""
        cards.append(DeckCard(expression, reading or None, gloss))
    return cards


def load_deck_json(path: str | Path) -> list[DeckCard]:
    """Read a per-level JSON lexicon file (lemma -> {"meaning": …}) as cards."""
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, dict):
        raise LexiconError(f"deck JSON must be an object: {path}")
    cards = []
    for lemma, body in data.items():
        meaning = body.get("meaning", "") if isinstance(body, dict) else ""
        cards.append(DeckCard(str(lemma), None, str(meaning)))
    return cards


def build_gold_lexicon(
    decks: Mapping[Level, Sequence[DeckCard]],
    source_digest: str | None = None,
) -> LevelLexicon:
    """Union of parsed decks; a lemma seen at several levels keeps the easiest."""
    entries: dict[str, LexiconEntry] = {}
    for level in sorted(decks, key=lambda lv: lv.value):
        for card in decks[level]:
            for parsed in parse_deck_entry(card.expression, card.reading, card.gloss):
                existing = entries.get(parsed.lemma)
                if existing is not None and existing.level is not None and existing.level.value <= level.value:
                    continue
                entries[parsed.lemma] = LexiconEntry(parsed.lemma, level, parsed.meaning)
    if not entries:
        raise LexiconError("no vocabulary parsed from decks")
    if source_digest is None:
        blob = stable_json(
            {
                str(level): [[c.expression, c.reading, c.gloss] for c in cards]
                for level, cards in decks.items()
            }
        )
        source_digest = content_digest(blob)
    return LevelLexicon(entries=entries, provenance=GOLD_DECK, source_digest=source_digest)


_DECK_SUFFIXES = (".json", ".tsv")


def build_gold_lexicon_from_dir(deck_dir: str | Path) -> LevelLexicon:
    """Load ``n5.(json|tsv)`` … ``n1.(json|tsv)`` from a directory."""
    deck_dir = Path(deck_dir)
    if not deck_dir.is_dir():
        raise LexiconError(f"deck directory not found: {deck_dir}")
    decks: dict[Level, list[DeckCard]] = {}
    digest_parts: list[str] = []
    for path in sorted(deck_dir.iterdir()):
        if path.suffix not in _DECK_SUFFIXES:
            continue
        try:
            level = Level.from_label(path.stem)
        except ValueError:
            continue
        cards = load_deck_json(path) if path.suffix == ".json" else load_deck_tsv(path)
        decks.setdefault(level, []).extend(cards)
        digest_parts.append(f"{path.name}:{content_digest(path.read_bytes())}")
    if not decks:
        raise LexiconError(f"no deck files (n5..n1 .json/.tsv) in {deck_dir}")
    return build_gold_lexicon(decks, source_digest=content_digest("\n".join(digest_parts)))


# --------------------------------------------------------------------------
# Corpus-frequency heuristic bins
# --------------------------------------------------------------------------

_JAPANESE_RANGES = (
    (0x3040, 0x309F),  # hiragana
    (0x30A0, 0x30FF),  # katakana (includes the prolonged-sound mark U+30FC)
    (0x4E00, 0x9FFF),  # CJK unified ideographs
)


def is_japanese_script(text: str) -> bool:
    if not text:
        return False
    return all(any(lo <= ord(ch) <= hi for lo, hi in _JAPANESE_RANGES) for ch in text)


@dataclass
class CorpusLevelStats:
    """Per-level lemma counts backing the frequency heuristics."""

    counts: dict[int, Counter] = field(default_factory=dict)

    def add(self, lemma: str, level: Level, n: int = 1) -> None:
        self.counts.setdefault(level.value, Counter())[lemma] += n

    def count(self, lemma: str, level: Level) -> int:
        return self.counts.get(level.value, Counter())[lemma]

    def total_tokens(self, level: Level) -> int:
        return sum(self.counts.get(level.value, Counter()).values())

    @property
    def grand_total(self) -> int:
        return sum(sum(c.values()) for c in self.counts.values())

    def lemmas(self) -> list[str]:
        seen: set[str] = set()
        for counter in self.counts.values():
            seen.update(counter)
        return sorted(seen)

    def score(self, lemma: str, level: Level) -> float:
        total = self.total_tokens(level)
        if total == 0:
            return 0.0
        return self.count(lemma, level) / total

    def global_frequency(self, lemma: str) -> float:
        grand = self.grand_total
        if grand == 0:
            return 0.0
        return sum(c[lemma] for c in self.counts.values()) / grand


def accumulate_corpus_stats(
    sentences: Iterable[tuple[str, Level]],
    tokenizer: Tokenizer,
) -> CorpusLevelStats:
    """Count retained (Japanese-script, content) lemma occurrences per level."""
    stats = CorpusLevelStats()
    for text, level in sentences:
        for token in tokenizer.tokenize(text).tokens:
            lemma = normalize_lemma(token.lemma)
            if is_japanese_script(lemma):
                stats.add(lemma, level)
    return stats


def derive_heuristic_bins(
    stats: CorpusLevelStats,
    global_floor: float = DEFAULT_FREQUENCY_FLOOR,
    level_floor: float = DEFAULT_FREQUENCY_FLOOR,
    assign_threshold: float = DEFAULT_FREQUENCY_FLOOR,
) -> LevelLexicon:
    if stats.grand_total <= 0:
        raise LexiconError("empty corpus stats")
    entries: dict[str, LexiconEntry] = {}
    for lemma in stats.lemmas():
        if stats.global_frequency(lemma) <= global_floor:
            continue
        if not any(stats.score(lemma, lv) > level_floor for lv in LEVELS):
            continue
        for lv in LEVELS:  # N5 -> N1 scan: first sufficiently-frequent level wins
            if stats.score(lemma, lv) > assign_threshold:
                entries[lemma] = LexiconEntry(lemma, lv)
                break
    digest = content_digest(
        stable_json({str(lv): dict(counter) for lv, counter in sorted(stats.counts.items())})
    )
    return LevelLexicon(entries=entries, provenance=CORPUS_HEURISTIC, source_digest=digest)


def read_level_tagged_dir(corpus_dir: str | Path) -> Iterable[tuple[str, Level]]:
    """Yield (line, level) from ``n5.txt`` … ``n1.txt`` style corpora."""
    corpus_dir = Path(corpus_dir)
    if not corpus_dir.is_dir():
        raise LexiconError(f"corpus directory not found: {corpus_dir}")
    found = False
    for path in sorted(corpus_dir.glob("*.txt")):
        try:
            level = Level.from_label(path.stem)
        except ValueError:
            continue
        found = True
        for line in path.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if line:
                yield line, level
    if not found:
        raise LexiconError(f"no level-tagged .txt files in {corpus_dir}")


# --------------------------------------------------------------------------
# Serialization: per-level JSON files plus a small meta sidecar
# --------------------------------------------------------------------------

_META_NAME = "meta.json"


def save_lexicon(lexicon: LevelLexicon, out_dir: str | Path) -> list[Path]:
    """Write n5.json … n1.json (sorted keys) plus meta.json; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for level in LEVELS:
        payload = {
            lemma: {"meaning": entry.meaning or ""}
            for lemma, entry in lexicon.entries.items()
            if entry.level == level
        }
        path = out_dir / f"{level.label.lower()}.json"
        path.write_text(stable_json(payload), encoding="utf-8")
        written.append(path)
    meta = out_dir / _META_NAME
    meta.write_text(
        stable_json({"provenance": lexicon.provenance, "source_digest": lexicon.source_digest}),
        encoding="utf-8",
    )
    written.append(meta)
    return written


def load_lexicon(in_dir: str | Path) -> LevelLexicon:
    in_dir = Path(in_dir)
    meta_path = in_dir / _META_NAME
    if not meta_path.exists():
        raise LexiconError(f"missing {_META_NAME} in {in_dir}")
    meta = json.loads(meta_path.read_text(encoding="utf-8"))
    entries: dict[str, LexiconEntry] = {}
    for level in LEVELS:
        path = in_dir / f"{level.label.lower()}.json"
        if not path.exists():
            continue
        data = json.loads(path.read_text(encoding="utf-8"))
        for lemma, body in data.items():
            entries[lemma] = LexiconEntry(lemma, level, body.get("meaning") or None)
    return LevelLexicon(
        entries=entries,
        provenance=meta["provenance"],
        source_digest=meta["source_digest"],
    )
