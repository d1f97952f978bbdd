"""Emotion attribute ranking for mixed-emotion speech synthesis control."""

__version__ = "0.1.0"

from .attributes import (
    NAMED_MIXTURES,
    AttributeVector,
    MixtureSpec,
    compose_mixture,
    named_mixture,
    normalize,
    predict_attributes,
)
from .corpus import LabeledFeatures
from .emotions import DEFAULT_EMOTIONS, EmotionPair, all_pairs
from .errors import EmoAttrError, FormatError
from .evaluation import (
    ProbeConfig,
    SyntheticCorpusConfig,
    generate_synthetic,
    predict_proba,
    probability_curve,
    ranking_report,
    train_probe,
)
from .features import FEATURE_DIM, AudioClip, FrameParams, extract_features, feature_names
from .ranking import RankModel, SolverConfig, build_constraints, score, train_pair_models, train_rank_svm

__all__ = [
    "NAMED_MIXTURES", "AttributeVector", "MixtureSpec", "compose_mixture", "named_mixture", "normalize",
    "predict_attributes", "LabeledFeatures", "DEFAULT_EMOTIONS", "EmotionPair", "all_pairs", "EmoAttrError",
    "FormatError", "ProbeConfig", "SyntheticCorpusConfig", "generate_synthetic", "predict_proba",
    "probability_curve", "ranking_report", "train_probe", "FEATURE_DIM", "AudioClip", "FrameParams",
    "extract_features", "feature_names", "RankModel", "SolverConfig", "build_constraints", "score",
    "train_pair_models", "train_rank_svm",
]
