"""Prototypical outlier proxies for out-of-distribution detection."""

from .datagen import Dataset, SynthSpec, generate, toy_grid
from .evaluator import MetricReport, ScoredSample, baseline_score, compute_metrics, decide, pop_score
from .hierarchy import (
    DistanceMatrix,
    LabelTree,
    SimilarityMatrix,
    augment_with_proxies,
    build_distance_matrix,
    distance_to_similarity,
    lca_distance,
)
from .losses import LossConfig, LossResult, cosine_ce, hsbl
from .netcore import FeatureExtractor, ForwardRecord, backward, forward, init_params
from .prototypes import PrototypeSet, cosine_to, factor_similarity
from .trainer import TrainConfig, TrainLog, build_pop_classifier, train

__version__ = "0.1.0"
