"""Per-sample reliability weights for reliability-sensitive training.

A histogram whose kurtosis is close to the normal value 3 is treated as a
reliable label. With ``T = 1 / (|kurtosis - 3| + eps)`` the weight is
``mu(T) = ln(T+1) / (ln(T+1) + 1)`` below the threshold ``Th`` and 1 at or
above it. The threshold is calibrated so that a chosen top fraction of the
training set saturates at weight 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from .divergence import divergence, gradient
from .histogram import ScoreHistogram, central_moments


class UncalibratedThresholdError(RuntimeError):
    pass


@dataclass(frozen=True)
class ReliabilityConfig:
    """Reliability settings.

    ``threshold`` and ``count_threshold`` stay None until calibrated against a
    training set at ``percentile`` (0.90 keeps the top 10% at weight 1).
    """

    epsilon: float = 1e-6
    percentile: float = 0.90
    threshold: float | None = None
    lam: float = 1.0
    reference_count: float = 210.0
    count_threshold: float | None = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not 0.0 < self.percentile < 1.0:
            raise ValueError("percentile must lie in (0, 1)")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if not self.reference_count > 0:
            raise ValueError("reference count must be positive")
        for th in (self.threshold, self.count_threshold):
            if th is not None and not th > 0:
                raise ValueError("thresholds must be positive")


def saturating_weight(t: float, threshold: float) -> float:
    """mu(T): ln(T+1)/(ln(T+1)+1) for T < threshold, else 1."""
    if t >= threshold:
        return 1.0
    u = math.log1p(t)
    return u / (u + 1.0)


def kurtosis_score(hist, epsilon: float = 1e-6) -> float | None:
    """T(y) = 1 / (|kurtosis - 3| + eps); None for a zero-variance histogram."""
    if isinstance(hist, ScoreHistogram):
        p, values = hist.probs, hist.scale.values
    else:
        p = np.asarray(hist, dtype=np.float64)
        values = np.arange(1.0, p.size + 1.0)
    m2, _, m4 = central_moments(p, values)
    if m2 <= 0.0:
        return None
    return 1.0 / (abs(m4 / (m2 * m2) - 3.0) + epsilon)


def kurtosis_reliability(hist, cfg: ReliabilityConfig) -> float:
    if cfg.threshold is None:
        raise UncalibratedThresholdError("threshold not calibrated")
    t = kurtosis_score(hist, cfg.epsilon)
    if t is None:
        return 0.0
    return saturating_weight(t, cfg.threshold)


def quantile_threshold(values: Iterable[float], percentile: float = 0.90) -> float:
    """Smallest value such that the top ``ceil((1 - percentile) * n)`` values reach it.

    Without ties exactly that many values are >= the returned threshold.
    """
    if not 0.0 < percentile < 1.0:
        raise ValueError("percentile must lie in (0, 1)")
    v = np.sort(np.asarray(list(values), dtype=np.float64))
    if v.size == 0:
        raise ValueError("cannot calibrate a threshold on an empty set")
    # round before ceil: (1 - 0.9) * 100 is 9.999999999999998 in floating point
    top = max(1, math.ceil(round((1.0 - percentile) * v.size, 9)))
    return float(v[v.size - top])


def calibrate_threshold(
    train_hists: Sequence, percentile: float = 0.90, epsilon: float = 1e-6
) -> float:
    """Kurtosis threshold Th over a training set; degenerate histograms are ignored."""
    if len(train_hists) == 0:
        raise ValueError("cannot calibrate a threshold on an empty set")
    scores = [t for t in (kurtosis_score(h, epsilon) for h in train_hists) if t is not None]
    if not scores:
        raise ValueError("every training histogram is degenerate")
    return quantile_threshold(scores, percentile)


def calibrate_count_threshold(
    counts: Sequence[int], percentile: float = 0.90, reference_count: float = 210.0
) -> float:
    return quantile_threshold([c / reference_count for c in counts], percentile)


def calibrate(
    cfg: ReliabilityConfig, train_hists: Sequence, counts: Sequence[int] | None = None
) -> ReliabilityConfig:
    """Return ``cfg`` with its thresholds resolved against a training set."""
    cfg = replace(cfg, threshold=calibrate_threshold(train_hists, cfg.percentile, cfg.epsilon))
    if counts is not None:
        cfg = replace(
            cfg,
            count_threshold=calibrate_count_threshold(counts, cfg.percentile, cfg.reference_count),
        )
    return cfg


def rating_count_reliability(count: int, cfg: ReliabilityConfig) -> float:
    """Weight from the number of raters, mu(L / reference_count)."""
    if count < 1:
        raise ValueError("rating count must be at least 1")
    if cfg.count_threshold is None:
        raise UncalibratedThresholdError("threshold not calibrated")
    return saturating_weight(count / cfg.reference_count, cfg.count_threshold)


def blended_reliability(r_kurt: float, r_cnt: float, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    if lam == 1.0:
        return r_kurt
    if lam == 0.0:
        return r_cnt
    return lam * r_kurt + (1.0 - lam) * r_cnt


def weighted_loss(kind, y, y_hat, r: float):
    if not 0.0 <= r <= 1.0:
        raise ValueError("reliability weight must lie in [0, 1]")
    return r * divergence(kind, y, y_hat)


def weighted_gradient(kind, y, y_hat, r: float) -> np.ndarray:
    if r == 0.0:
        return np.zeros(np.shape(y_hat))
    return r * gradient(kind, y, y_hat)
