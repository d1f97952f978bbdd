"""In-memory labeled feature datasets shared by training and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InsufficientData, InvalidInput

SPLITS = ("train", "test", "eval")


@dataclass
class LabeledFeatures:
    """Feature rows with an emotion label, split and id for each row."""

    features: np.ndarray
    labels: np.ndarray
    splits: Optional[np.ndarray] = None
    ids: Optional[list] = None
    name: str = ""
    speakers: Optional[list] = field(default=None, repr=False)

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=object)
        n = self.features.shape[0]
        if self.labels.shape != (n,):
            raise InvalidInput(f"{self.labels.shape[0]} labels for {n} feature rows")
        if self.splits is not None:
            self.splits = np.asarray(self.splits, dtype=object)
            if self.splits.shape != (n,):
                raise InvalidInput("splits must align with feature rows")
        if self.ids is None:
            self.ids = [f"{self.name or 'row'}_{i:05d}" for i in range(n)]
        elif len(self.ids) != n:
            raise InvalidInput("ids must align with feature rows")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def indices_of(self, emotion: str) -> np.ndarray:
        return np.flatnonzero(self.labels == emotion)

    def emotions_present(self) -> list[str]:
        return sorted(set(self.labels.tolist()))

    def subset(self, split: Optional[str] = None, emotions: Optional[Sequence[str]] = None) -> "LabeledFeatures":
        mask = np.ones(len(self), dtype=bool)
        if split is not None:
            if self.splits is None:
                raise InvalidInput("dataset carries no split information")
            mask &= self.splits == split
        if emotions is not None:
            mask &= np.isin(self.labels, list(emotions))
        idx = np.flatnonzero(mask)
        return LabeledFeatures(
            features=self.features[idx],
            labels=self.labels[idx],
            splits=None if self.splits is None else self.splits[idx],
            ids=[self.ids[i] for i in idx],
            name=f"{self.name}[{split or '*'}]",
            speakers=None if self.speakers is None else [self.speakers[i] for i in idx],
        )

    def centroid(self, emotion: str) -> np.ndarray:
        idx = self.indices_of(emotion)
        if idx.size == 0:
            raise InsufficientData(f"no samples of {emotion} in {self.name or 'dataset'}")
        return self.features[idx].mean(axis=0)
