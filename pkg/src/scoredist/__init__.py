"""Score-distribution losses over ordinal rating histograms.

The central loss is the cumulative Jensen-Shannon divergence (CJS) together
with a kurtosis-based reliability weighting, plus a small trainable
histogram predictor and an evaluation harness.
"""

from .divergence import DivergenceKind, divergence, gradient
from .histogram import (
    CumulativeHistogram,
    DistributionStats,
    RatingScale,
    RatingSet,
    ScoreHistogram,
    cumulative,
    distribution_stats,
    histogram_from_ratings,
)
from .predictor import PredictorConfig, PredictorParams, forward, init_params, predict
from .reliability import ReliabilityConfig, kurtosis_reliability, weighted_loss
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "CumulativeHistogram",
    "DistributionStats",
    "DivergenceKind",
    "PredictorConfig",
    "PredictorParams",
    "RatingScale",
    "RatingSet",
    "ReliabilityConfig",
    "ScoreHistogram",
    "TrainConfig",
    "cumulative",
    "distribution_stats",
    "divergence",
    "forward",
    "gradient",
    "histogram_from_ratings",
    "init_params",
    "kurtosis_reliability",
    "predict",
    "train",
    "weighted_loss",
]
