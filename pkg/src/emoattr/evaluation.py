"""Objective evaluation stand-ins: synthetic corpora, a softmax probe,
mixture probability curves and ranking-accuracy reports."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .attributes import normalize
from .corpus import LabeledFeatures
from .emotions import DEFAULT_EMOTIONS
from .errors import DegenerateModel, InsufficientData, InvalidConfig, InvalidInput
from .features import FEATURE_DIM
from .ranking import RankModel, score

logger = logging.getLogger(__name__)

DEFAULT_LEVELS = (0.0, 0.3, 0.6, 0.9)


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    emotions: tuple = DEFAULT_EMOTIONS
    n_train: int = 300
    n_test: int = 30
    n_eval: int = 20
    dim: int = FEATURE_DIM
    separation: float = 5.0
    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if len(self.emotions) < 1:
            raise InvalidConfig("need at least one emotion class")
        for name in ("n_train", "n_test", "n_eval", "dim"):
            if getattr(self, name) < 1:
                raise InvalidConfig(f"{name} must be positive, got {getattr(self, name)}")
        if self.dim < len(self.emotions):
            raise InvalidConfig("dimension must be at least the number of classes")
        if self.separation < 0 or not self.sigma > 0:
            raise InvalidConfig("separation must be >= 0 and sigma > 0")

    @property
    def num_classes(self) -> int:
        return len(self.emotions)


def generate_synthetic(config: SyntheticCorpusConfig = SyntheticCorpusConfig()) -> LabeledFeatures:
    """Isotropic Gaussian clusters, one per emotion.

    Class means sit on random orthonormal directions scaled so every pair of
    means is ``separation * sigma`` apart. Rows are grouped by split, then
    emotion.
    """
    rng = np.random.default_rng(config.seed)
    k = config.num_classes
    basis, _ = np.linalg.qr(rng.standard_normal((config.dim, k)))
    means = basis.T * (config.separation * config.sigma / np.sqrt(2.0))

    feats, labels, splits, ids = [], [], [], []
    for split, n in (("train", config.n_train), ("test", config.n_test), ("eval", config.n_eval)):
        for c, emo in enumerate(config.emotions):
            feats.append(means[c] + config.sigma * rng.standard_normal((n, config.dim)))
            labels += [emo] * n
            splits += [split] * n
            ids += [f"{emo.lower()}_{split}_{i:04d}" for i in range(n)]
    return LabeledFeatures(
        features=np.vstack(feats),
        labels=np.array(labels, dtype=object),
        splits=np.array(splits, dtype=object),
        ids=ids,
        name=f"synthetic(seed={config.seed},sep={config.separation})",
    )


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class ProbeConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    l2: float = 1e-4
    seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if not self.learning_rate > 0 or self.epochs < 1 or self.l2 < 0:
            raise InvalidConfig(f"invalid probe config {self}")


@dataclass(frozen=True)
class ProbeClassifier:
    weights: np.ndarray  # (num_classes, dim)
    biases: np.ndarray
    class_order: tuple
    config: ProbeConfig = field(default_factory=ProbeConfig)
    mean: Optional[np.ndarray] = None
    std: Optional[np.ndarray] = None
    loss_history: tuple = ()
    diverged: bool = False

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def train_probe(data: LabeledFeatures, config: ProbeConfig = ProbeConfig(), class_order=None) -> ProbeClassifier:
    """Multinomial logistic regression by full-batch gradient descent.

    Minimizes mean softmax cross-entropy plus ``l2/2 * |W|^2`` from a zero
    start. An epoch that increases the loss marks the probe as diverged.
    """
    present = set(data.emotions_present())
    if class_order is None:
        known = [e for e in DEFAULT_EMOTIONS if e in present]
        class_order = known + sorted(present - set(known))
    classes = tuple(class_order)
    if len(present) < 2:
        raise InsufficientData(f"probe needs at least two classes, found {sorted(present)}")
    if not present <= set(classes):
        raise InvalidInput(f"labels {sorted(present - set(classes))} missing from class order")

    X = data.features
    mean = std = None
    if config.standardize:
        mean = X.mean(axis=0)
        std = np.where(X.std(axis=0) > 0, X.std(axis=0), 1.0)
        X = (X - mean) / std
    n, d = X.shape
    Y = np.zeros((n, len(classes)))
    Y[np.arange(n), [classes.index(l) for l in data.labels]] = 1.0

    W = np.zeros((len(classes), d))
    b = np.zeros(len(classes))
    lr, lam = config.learning_rate, config.l2

    def loss_and_probs(W, b):
        logits = X @ W.T + b
        logits = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(logits).sum(axis=1))
        ce = float(np.mean(logz - np.sum(Y * logits, axis=1)))
        return ce + 0.5 * lam * float(np.sum(W * W)), np.exp(logits - logz[:, None])

    loss, P = loss_and_probs(W, b)
    history = [loss]
    diverged = False
    for _ in range(config.epochs):
        G = (P - Y) / n
        W = W - lr * (G.T @ X + lam * W)
        b = b - lr * G.sum(axis=0)
        loss, P = loss_and_probs(W, b)
        if not np.isfinite(loss) or loss > history[-1] + 1e-12:
            diverged = True
        history.append(loss)
        if not np.isfinite(loss):
            break
    if diverged:
        logger.warning("probe training loss increased; lower the learning rate (now %g)", lr)
    return ProbeClassifier(W, b, classes, config, mean, std, tuple(history), diverged)


def predict_proba(probe: ProbeClassifier, x) -> np.ndarray:
    """Class probabilities ``softmax(W x + b)`` in ``probe.class_order``."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.shape[-1] != probe.dim or arr.ndim > 2:
        raise InvalidInput(f"expected {probe.dim}-dimensional features, got shape {arr.shape}")
    if probe.mean is not None:
        arr = (arr - probe.mean) / probe.std
    return _softmax(arr @ probe.weights.T + probe.biases)


@dataclass(frozen=True)
class ProbabilityCurve:
    base: str
    mixed: str
    mix_levels: tuple
    class_order: tuple
    probabilities: np.ndarray  # (levels, classes)
    sample_counts: tuple

    def curve(self, emotion: str) -> np.ndarray:
        return self.probabilities[:, self.class_order.index(emotion)]

    def rows(self):
        """``(level, emotion, mean_probability, n)`` for CSV export."""
        for i, p in enumerate(self.mix_levels):
            for j, e in enumerate(self.class_order):
                yield p, e, float(self.probabilities[i, j]), self.sample_counts[i]


def mix_features(x_base: np.ndarray, target: np.ndarray, p: float) -> np.ndarray:
    """Surrogate mixed features: move ``x_base`` a fraction ``p`` towards ``target``."""
    return (1.0 - p) * x_base + p * target


def probability_curve(
    probe: ProbeClassifier,
    base: str,
    mixed: str,
    levels: Sequence[float],
    eval_set: LabeledFeatures,
    mixed_centroid: np.ndarray,
) -> ProbabilityCurve:
    """Mean probe probabilities of base-class samples mixed towards ``mixed``.

    ``mixed_centroid`` is the training centroid of the mixed-in emotion.
    """
    xb = eval_set.features[eval_set.indices_of(base)]
    if xb.shape[0] == 0:
        raise InsufficientData(f"no evaluation samples of {base}")
    probs = []
    for p in levels:
        if not 0.0 <= p <= 1.0:
            raise InvalidInput(f"mix level {p} outside [0, 1]")
        probs.append(predict_proba(probe, mix_features(xb, mixed_centroid, p)).mean(axis=0))
    return ProbabilityCurve(
        base=base,
        mixed=mixed,
        mix_levels=tuple(float(p) for p in levels),
        class_order=probe.class_order,
        probabilities=np.array(probs),
        sample_counts=tuple(xb.shape[0] for _ in levels),
    )


@dataclass(frozen=True)
class PairAccuracy:
    high: str
    low: str
    accuracy: float
    n_pairs: int


@dataclass
class RankingReport:
    pairs: list
    # (high, low, class) -> (mean, std) of the normalized score
    distributions: dict

    def accuracy(self, high: str, low: str) -> float:
        for r in self.pairs:
            if {r.high, r.low} == {high, low}:
                return r.accuracy
        raise KeyError((high, low))

    def min_accuracy(self) -> float:
        return min(r.accuracy for r in self.pairs)


def ordering_accuracy(model: RankModel, data: LabeledFeatures) -> tuple[float, int]:
    """Fraction of all cross-class pairs ordered high above low."""
    hi = data.features[data.indices_of(model.pair.high)]
    lo = data.features[data.indices_of(model.pair.low)]
    if hi.shape[0] == 0 or lo.shape[0] == 0:
        missing = model.pair.high if hi.shape[0] == 0 else model.pair.low
        raise InsufficientData(f"no samples of {missing} to evaluate pair {model.pair}")
    sh, sl = score(model, hi), score(model, lo)
    correct = np.count_nonzero(sh[:, None] > sl[None, :])
    return correct / (sh.size * sl.size), sh.size * sl.size


def ranking_report(models: Iterable[RankModel], test_set: LabeledFeatures) -> RankingReport:
    pairs, dist = [], {}
    for m in models:
        acc, n = ordering_accuracy(m, test_set)
        pairs.append(PairAccuracy(m.pair.high, m.pair.low, acc, n))
        for emo in test_set.emotions_present():
            rows = test_set.features[test_set.indices_of(emo)]
            try:
                s = np.array([normalize(v, m) for v in np.atleast_1d(score(m, rows))])
            except DegenerateModel:
                continue
            dist[(m.pair.high, m.pair.low, emo)] = (float(s.mean()), float(s.std()))
    return RankingReport(pairs, dist)


def spearman_rho(values: Sequence[float]) -> float:
    """Spearman correlation of ``values`` against their position."""
    from scipy.stats import spearmanr

    v = np.asarray(values, dtype=float)
    if v.size < 2 or np.all(v == v[0]):
        return 0.0
    return float(spearmanr(np.arange(v.size), v).statistic)
