"""JLPT difficulty scale shared across the whole engine.

Levels are the scalar control targets: 1 (N5, easiest) through 5 (N1,
hardest). Every module that talks about difficulty does so in terms of
this type, so the value<->label bijection lives here and nowhere else.
"""
from __future__ import annotations

from dataclasses import dataclass

_LABELS = {1: "N5", 2: "N4", 3: "N3", 4: "N2", 5: "N1"}
_VALUES = {label: value for value, label in _LABELS.items()}

N_LEVELS = 5


@dataclass(frozen=True, order=True)
class Level:
    """One JLPT rung; ordering by ``value`` is difficulty ordering."""

    value: int

    def __post_init__(self) -> None:
        if self.value not in _LABELS:
            raise ValueError(f"level value must be in 1..5, got {self.value!r}")

    @property
    def label(self) -> str:
        return _LABELS[self.value]

    @classmethod
    def from_label(cls, label: str) -> "Level":
        key = str(label).strip().upper()
        if key not in _VALUES:
            raise ValueError(f"unknown JLPT label: {label!r}")
        return cls(_VALUES[key])

    @classmethod
    def parse(cls, raw: "int | str | Level") -> "Level":
        """Accept 3, "3", "N3" or an existing Level."""
        if isinstance(raw, Level):
            return raw
        if isinstance(raw, int):
            return cls(raw)
        text = str(raw).strip()
        if text.lstrip("+-").isdigit():
            return cls(int(text))
        return cls.from_label(text)

    def __str__(self) -> str:
        return self.label


LEVELS: tuple[Level, ...] = tuple(Level(v) for v in sorted(_LABELS))


class _Unbinned:
    """Sentinel for lemmas absent from a lexicon; falsy and unique."""

    __slots__ = ()
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "unbinned"

    def __bool__(self) -> bool:
        return False


UNBINNED = _Unbinned()
