"""Segmentation of raw text into lemmatized content tokens.

Every metric consumes ``TokenizedUtterance`` objects, so the tokenizer is
behind a small pluggable interface. The built-in backend is a greedy
longest-match segmenter over an explicit surface->lemma table: hermetic and
deterministic, which is what the test suite needs. Fidelity to a real
morphological analyzer is delegated to the external adapters
(:class:`SubprocessTokenizer`, :class:`HttpTokenizer`).
"""
from __future__ import annotations

import json
import subprocess
import unicodedata
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence


class BackendError(RuntimeError):
    """An external tokenizer backend failed or is unavailable."""


@dataclass(frozen=True)
class Token:
    surface: str
    lemma: str
    start: int
    end: int
    is_content: bool = True

    def __post_init__(self) -> None:
        if self.start >= self.end:
            raise ValueError(f"empty token span ({self.start}, {self.end})")
        if self.is_content and not self.lemma:
            raise ValueError("content token requires a non-empty lemma")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)


@dataclass(frozen=True)
class TokenizedUtterance:
    """Source text plus its content tokens (punctuation already dropped)."""

    source: str
    tokens: tuple[Token, ...]

    def __post_init__(self) -> None:
        prev_end = 0
        for tok in self.tokens:
            if tok.start < prev_end or tok.end > len(self.source):
                raise ValueError("token spans must be increasing and in bounds")
            prev_end = tok.end

    @property
    def lemmas(self) -> list[str]:
        return [t.lemma for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


class Tokenizer(Protocol):
    def tokenize(self, text: str) -> TokenizedUtterance: ...


def is_punctuation_char(ch: str) -> bool:
    # P*/S*/Z* per the content/punctuation rule; C* (controls such as \n)
    # can never be vocabulary either, so they are dropped with punctuation.
    return unicodedata.category(ch)[0] in "PSZC"


# Polite-suffix table used when expanding dictionary forms into matchable
# surfaces. Intentionally tiny: enough for hermetic fixtures, not a grammar.
_MASU_SUFFIXES = ("ます", "ました", "ましょう", "ません")


def _inflected_surfaces(lemma: str) -> Iterable[str]:
    yield lemma
    if lemma == "する":
        for suffix in _MASU_SUFFIXES:
            yield "し" + suffix
    elif len(lemma) >= 2 and lemma.endswith("る"):
        stem = lemma[:-1]
        for suffix in _MASU_SUFFIXES:
            yield stem + suffix


class DictionaryTokenizer:
    """Greedy longest-match segmenter over a fixed surface->lemma table.

    ``lemmas`` are expanded with the polite-suffix table above;
    ``surfaces`` adds (or overrides) explicit surface->lemma pairs.
    Out-of-dictionary runs are emitted as single tokens with
    lemma == surface so downstream denominators count every token.
    """

    def __init__(
        self,
        lemmas: Iterable[str] = (),
        surfaces: Mapping[str, str] | None = None,
    ) -> None:
        table: dict[str, str] = {}
        for lemma in lemmas:
            for surface in _inflected_surfaces(lemma):
                table.setdefault(surface, lemma)
        if surfaces:
            table.update(surfaces)
        self._table = table
        self._max_len = max((len(s) for s in table), default=0)

    def _match_at(self, text: str, i: int) -> tuple[str, str] | None:
        limit = min(self._max_len, len(text) - i)
        for length in range(limit, 0, -1):
            surface = text[i : i + length]
            lemma = self._table.get(surface)
            if lemma is not None:
                return surface, lemma
        return None

    def tokenize(self, text: str) -> TokenizedUtterance:
        tokens: list[Token] = []
        i = 0
        n = len(text)
        while i < n:
            ch = text[i]
            if is_punctuation_char(ch):
                i += 1
                continue
            match = self._match_at(text, i)
            if match is not None:
                surface, lemma = match
                tokens.append(Token(surface, lemma, i, i + len(surface)))
                i += len(surface)
                continue
            # Unknown run: extend until a dictionary match or punctuation.
            j = i + 1
            while j < n and not is_punctuation_char(text[j]) and self._match_at(text, j) is None:
                j += 1
            surface = text[i:j]
            tokens.append(Token(surface, surface, i, j))
            i = j
        return TokenizedUtterance(source=text, tokens=tuple(tokens))


_ADAPTER_FIELDS = ("surface", "lemma", "start", "end", "pos")


def _tokens_from_wire(text: str, payload: object) -> TokenizedUtterance:
    if not isinstance(payload, list):
        raise BackendError(f"adapter returned non-list payload: {type(payload).__name__}")
    tokens = []
    for item in payload:
        if not isinstance(item, dict) or any(f not in item for f in _ADAPTER_FIELDS[:4]):
            raise BackendError(f"adapter item missing required fields: {item!r}")
        surface = str(item["surface"])
        if surface and all(is_punctuation_char(c) for c in surface):
            continue
        tokens.append(
            Token(
                surface=surface,
                lemma=str(item["lemma"]),
                start=int(item["start"]),
                end=int(item["end"]),
            )
        )
    return TokenizedUtterance(source=text, tokens=tuple(tokens))


class SubprocessTokenizer:
    """Adapter for a line-in/JSON-out analyzer process.

    The child receives one line of text on stdin per call and must answer
    with one line holding a JSON array of
    ``{"surface":…, "lemma":…, "start":…, "end":…, "pos":…}`` objects.
    """

    def __init__(self, argv: Sequence[str]) -> None:
        self._argv = list(argv)
        self._proc: subprocess.Popen[str] | None = None

    def _ensure_proc(self) -> subprocess.Popen[str]:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self._argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                )
            except OSError as exc:
                raise BackendError(f"cannot start tokenizer backend {self._argv!r}: {exc}") from exc
        return self._proc

    def tokenize(self, text: str) -> TokenizedUtterance:
        if "\n" in text:
            text = text.replace("\n", " ")
        proc = self._ensure_proc()
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(text + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, ValueError) as exc:
            raise BackendError(f"tokenizer backend I/O failed: {exc}") from exc
        if not line:
            raise BackendError("tokenizer backend closed its output stream")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendError(f"tokenizer backend emitted invalid JSON: {line!r}") from exc
        return _tokens_from_wire(text, payload)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.terminate()
            self._proc.wait(timeout=5)


class HttpTokenizer:
    """Adapter posting ``{"text": …}`` to an analyzer endpoint."""

    def __init__(self, url: str, client=None) -> None:
        import httpx

        self._url = url
        self._client = client or httpx.Client()

    def tokenize(self, text: str) -> TokenizedUtterance:
        import httpx

        try:
            resp = self._client.post(self._url, json={"text": text})
        except httpx.HTTPError as exc:
            raise BackendError(f"tokenizer backend unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise BackendError(f"tokenizer backend returned HTTP {resp.status_code}")
        return _tokens_from_wire(text, resp.json())


_REGISTRY: dict[str, Tokenizer] = {}


def register_backend(name: str, backend: Tokenizer) -> None:
    if name in _REGISTRY:
        raise ValueError(f"tokenizer backend already registered: {name!r}")
    _REGISTRY[name] = backend


def get_backend(name: str) -> Tokenizer:
    try:
        return _REGISTRY[name]
    except KeyError:
        raise BackendError(f"unknown tokenizer backend: {name!r}") from None


def resolve_backend(config_value: str) -> Tokenizer:
    """Resolve the ``tokenizer.backend`` config key: builtin | external:<name>."""
    if config_value == "builtin":
        return get_backend("builtin")
    if config_value.startswith("external:"):
        return get_backend(config_value.split(":", 1)[1])
    raise BackendError(f"bad tokenizer.backend value: {config_value!r}")


def clear_registry() -> None:
    """Test hook; the registry is process-global."""
    _REGISTRY.clear()
