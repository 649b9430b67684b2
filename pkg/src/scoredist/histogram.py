"""Ordinal rating histograms: raw vote counts, normalized histograms, CDFs and moments."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

SUM_TOL = 1e-9


class DegenerateDistributionError(ValueError):
    """Raised when a zero-variance histogram has no defined skewness/kurtosis."""


class ScaleMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class RatingScale:
    """Ordered rating levels R_1 < ... < R_Z."""

    level_values: tuple[float, ...] = tuple(float(v) for v in range(1, 11))

    def __post_init__(self):
        values = tuple(float(v) for v in self.level_values)
        if len(values) < 2:
            raise ValueError("a rating scale needs at least 2 levels")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("level values must be strictly increasing")
        object.__setattr__(self, "level_values", values)

    @classmethod
    def integer(cls, num_levels: int = 10, start: int = 1) -> "RatingScale":
        return cls(tuple(float(v) for v in range(start, start + num_levels)))

    @property
    def num_levels(self) -> int:
        return len(self.level_values)

    @property
    def values(self) -> np.ndarray:
        return np.asarray(self.level_values, dtype=np.float64)


DEFAULT_SCALE = RatingScale()


@dataclass(frozen=True)
class RatingSet:
    """Vote counts per rating level; L is the total number of raters."""

    counts: tuple[int, ...]
    scale: RatingScale = DEFAULT_SCALE

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) != self.scale.num_levels:
            raise ScaleMismatchError(
                f"{len(counts)} counts for a {self.scale.num_levels}-level scale"
            )
        if any(c < 0 for c in counts):
            raise ValueError("rating counts must be non-negative")
        object.__setattr__(self, "counts", counts)

    @classmethod
    def from_ratings(cls, ratings: Sequence[float], scale: RatingScale = DEFAULT_SCALE) -> "RatingSet":
        """Tally individual ratings; every rating must equal one of the scale's levels."""
        index = {v: i for i, v in enumerate(scale.level_values)}
        counts = [0] * scale.num_levels
        for r in ratings:
            try:
                counts[index[float(r)]] += 1
            except KeyError:
                raise ValueError(f"rating {r!r} is not a level of the scale") from None
        return cls(tuple(counts), scale)

    @property
    def num_ratings(self) -> int:
        return sum(self.counts)


@dataclass(frozen=True, eq=False)
class ScoreHistogram:
    """Normalized score vector h(1..Z)."""

    probs: np.ndarray
    scale: RatingScale = field(default=DEFAULT_SCALE)

    def __post_init__(self):
        p = np.array(self.probs, dtype=np.float64)
        if p.ndim != 1 or p.size != self.scale.num_levels:
            raise ScaleMismatchError(
                f"histogram of shape {p.shape} does not match a {self.scale.num_levels}-level scale"
            )
        if not np.all(np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
            raise ValueError("histogram entries must lie in [0, 1]")
        if abs(p.sum() - 1.0) > SUM_TOL:
            raise ValueError(f"histogram sums to {p.sum()!r}, not 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return self.probs.size

    def __eq__(self, other):
        if not isinstance(other, ScoreHistogram):
            return NotImplemented
        return self.scale == other.scale and np.array_equal(self.probs, other.probs)

    __hash__ = None

    @property
    def is_degenerate(self) -> bool:
        return central_moments(self.probs, self.scale.values)[0] <= 0.0

    def mirrored(self) -> "ScoreHistogram":
        """Reflect about the scale midpoint (bin i <-> bin Z+1-i)."""
        return ScoreHistogram(self.probs[::-1].copy(), self.scale)


@dataclass(frozen=True, eq=False)
class CumulativeHistogram:
    cum: np.ndarray
    scale: RatingScale = DEFAULT_SCALE

    def __array__(self, dtype=None, copy=None):
        return self.cum if dtype is None else self.cum.astype(dtype)


@dataclass(frozen=True)
class DistributionStats:
    """Moments of a histogram. ``skewness``/``kurtosis`` are None for a point mass."""

    mean: float
    median: float
    variance: float
    skewness: float | None
    kurtosis: float | None

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))

    @property
    def degenerate(self) -> bool:
        return self.skewness is None


def histogram_from_ratings(ratings: RatingSet) -> ScoreHistogram:
    total = ratings.num_ratings
    if total < 1:
        raise ValueError("empty ratings")
    probs = np.asarray(ratings.counts, dtype=np.float64) / total
    return ScoreHistogram(probs, ratings.scale)


def cumulative(hist: ScoreHistogram) -> CumulativeHistogram:
    cum = np.cumsum(hist.probs)
    # absorb the rounding of the running sum so that Y(Z) == 1
    cum = np.minimum(cum, 1.0)
    cum[-1] = 1.0
    cum.setflags(write=False)
    return CumulativeHistogram(cum, hist.scale)


def central_moments(probs: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    """Second, third and fourth central moments of a normalized histogram."""
    mean = float(np.dot(probs, values))
    d = values - mean
    d2 = d * d
    return float(np.dot(probs, d2)), float(np.dot(probs, d2 * d)), float(np.dot(probs, d2 * d2))


def kurtosis(hist: ScoreHistogram) -> float:
    """Pearson kurtosis m4 / m2**2 (3 for a normal distribution)."""
    m2, _, m4 = central_moments(hist.probs, hist.scale.values)
    if m2 <= 0.0:
        raise DegenerateDistributionError("kurtosis is undefined for a zero-variance histogram")
    return m4 / (m2 * m2)


def distribution_stats(hist: ScoreHistogram) -> DistributionStats:
    """Mean, median, variance and the uncorrected skewness/kurtosis of ``hist``.

    The median is the smallest level whose CDF reaches 0.5. A point mass gets
    ``None`` for skewness and kurtosis; use :func:`kurtosis` to get an exception
    instead.
    """
    values = hist.scale.values
    p = hist.probs
    mean = float(np.dot(p, values))
    m2, m3, m4 = central_moments(p, values)
    cum = cumulative(hist).cum
    median = float(values[np.argmax(cum >= 0.5 - 1e-12)])
    if m2 <= 0.0:
        return DistributionStats(mean, median, 0.0, None, None)
    return DistributionStats(mean, median, m2, m3 / m2**1.5, m4 / (m2 * m2))
