"""Emotion label sets and oriented emotion pairs."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .errors import InvalidInput

DEFAULT_EMOTIONS: tuple[str, ...] = ("Neutral", "Happy", "Sad", "Angry", "Surprise")


def canonical(name: str, emotions: Sequence[str] = DEFAULT_EMOTIONS) -> str:
    """Return the configured spelling of ``name`` (case-insensitive match)."""
    key = str(name).strip().lower()
    for e in emotions:
        if e.lower() == key:
            return e
    raise InvalidInput(f"unknown emotion {name!r}; expected one of {', '.join(emotions)}")


@dataclass(frozen=True)
class EmotionPair:
    """Samples of ``high`` are ranked above samples of ``low``."""

    high: str
    low: str

    def __post_init__(self):
        if self.high == self.low:
            raise InvalidInput(f"emotion pair needs two distinct emotions, got {self.high!r} twice")

    def key(self) -> frozenset:
        return frozenset((self.high, self.low))

    def __str__(self):
        return f"{self.high}>{self.low}"


def all_pairs(emotions: Iterable[str]) -> list[EmotionPair]:
    """One oriented pair per unordered combination, in configured order.

    For ``(a, b)`` with ``a`` listed first, the pair is ``EmotionPair(a, b)``.
    """
    return [EmotionPair(a, b) for a, b in combinations(list(emotions), 2)]
