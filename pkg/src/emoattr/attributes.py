"""Emotion attributes: normalized ranking scores and manual mixture vectors.

An attribute ``a_e`` in [0, 1] relates an utterance to emotion ``e``; a
smaller value means a more similar emotional style.
"""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .emotions import DEFAULT_EMOTIONS, canonical
from .errors import DegenerateModel, InvalidInput, MissingModel
from .ranking import RankModel, score

# Percentage p of a mixed-in emotion maps to attribute 1 - p (more presence,
# smaller attribute). Set to False to map p directly.
INVERSE_PERCENTAGE = True

NAMED_MIXTURES: dict[str, tuple[str, str]] = {
    "Outrage": ("Angry", "Surprise"),
    "Excitement": ("Happy", "Surprise"),
    "Disappointment": ("Sad", "Surprise"),
    "Bittersweet": ("Happy", "Sad"),
}


@dataclass(frozen=True)
class AttributeVector:
    input_emotion: str
    entries: Mapping[str, float]

    def __post_init__(self):
        for e, v in self.entries.items():
            if e == self.input_emotion:
                raise InvalidInput(f"attribute vector for {e} cannot contain its own slot")
            if not 0.0 <= v <= 1.0:
                raise InvalidInput(f"attribute {e}={v} outside [0, 1]")
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def values(self, order: Sequence[str]) -> list[float]:
        return [self.entries[e] for e in order if e != self.input_emotion]

    def as_dict(self) -> dict[str, float]:
        return dict(self.entries)


@dataclass(frozen=True)
class MixtureSpec:
    base: str
    components: Mapping[str, float]

    def __post_init__(self):
        if self.base in self.components:
            raise InvalidInput(f"base emotion {self.base} also listed as a mixed-in component")
        for e, p in self.components.items():
            if not (np.isfinite(p) and 0.0 <= p <= 1.0):
                raise InvalidInput(f"percentage for {e} must lie in [0, 1], got {p}")
        object.__setattr__(self, "components", MappingProxyType(dict(self.components)))


def normalize(raw_score: float, model: RankModel) -> float:
    """Map a raw score onto [0, 1] using the model's training-score bounds."""
    lo, hi = model.score_min, model.score_max
    if not hi > lo:
        raise DegenerateModel(f"model {model.pair} has degenerate score bounds [{lo}, {hi}]")
    return float(np.clip((raw_score - lo) / (hi - lo), 0.0, 1.0))


def _model_index(models: Iterable[RankModel]) -> dict[frozenset, RankModel]:
    return {m.pair.key(): m for m in models}


def presence(x, emotion: str, input_emotion: str, models) -> float:
    """Normalized score of ``x`` oriented so that 1 means most like ``emotion``."""
    index = models if isinstance(models, dict) else _model_index(models)
    model = index.get(frozenset((emotion, input_emotion)))
    if model is None:
        raise MissingModel(f"no ranking model for pair ({emotion}, {input_emotion})")
    s = normalize(score(model, x), model)
    return s if model.pair.high == emotion else 1.0 - s


def predict_attributes(
    x, input_emotion: str, models: Iterable[RankModel], emotions: Sequence[str] = DEFAULT_EMOTIONS
) -> AttributeVector:
    """Attribute vector of ``x`` against every emotion other than ``input_emotion``."""
    index = _model_index(models)
    entries = {e: 1.0 - presence(x, e, input_emotion, index) for e in emotions if e != input_emotion}
    return AttributeVector(input_emotion, entries)


def compose_mixture(spec: MixtureSpec, emotions: Sequence[str] = DEFAULT_EMOTIONS) -> AttributeVector:
    """Attribute vector realizing a manual mixture.

    The base emotion is the conversion target and is fully present, so it
    has no slot. Mixed-in emotions get ``1 - p``; all others get 1.
    """
    for e in (spec.base, *spec.components):
        if e not in emotions:
            raise InvalidInput(f"emotion {e} not in configured set {list(emotions)}")
    entries = {}
    for e in emotions:
        if e == spec.base:
            continue
        p = spec.components.get(e, 0.0)
        entries[e] = 1.0 - p if INVERSE_PERCENTAGE else p
    return AttributeVector(spec.base, entries)


def named_mixture(name: str, p: float) -> MixtureSpec:
    key = next((k for k in NAMED_MIXTURES if k.lower() == str(name).strip().lower()), None)
    if key is None:
        raise InvalidInput(f"unknown mixture {name!r}; choose from {', '.join(NAMED_MIXTURES)}")
    base, mixed = NAMED_MIXTURES[key]
    return MixtureSpec(base, {mixed: float(p)})


def parse_components(items: Iterable[str], emotions: Sequence[str] = DEFAULT_EMOTIONS) -> dict[str, float]:
    """Parse ``["sad=0.6", ...]`` into ``{"Sad": 0.6}``."""
    out = {}
    for item in items:
        name, sep, value = item.partition("=")
        if not sep:
            raise InvalidInput(f"expected EMOTION=PERCENT, got {item!r}")
        try:
            out[canonical(name, emotions)] = float(value)
        except ValueError:
            raise InvalidInput(f"percentage in {item!r} is not a number") from None
    return out
