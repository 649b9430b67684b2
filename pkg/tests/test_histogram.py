import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoredist.histogram import (
    DEFAULT_SCALE,
    DegenerateDistributionError,
    RatingScale,
    RatingSet,
    ScaleMismatchError,
    ScoreHistogram,
    cumulative,
    distribution_stats,
    histogram_from_ratings,
    kurtosis,
)

counts_strategy = st.lists(st.integers(0, 50), min_size=10, max_size=10).filter(lambda c: sum(c) > 0)


def brute_force_stats(counts, values):
    """Plain sample moments over the expanded multiset, denominator L."""
    xs = []
    for c, v in zip(counts, values):
        xs += [float(v)] * c
    n = len(xs)
    mean = math.fsum(xs) / n
    m2 = math.fsum((x - mean) ** 2 for x in xs) / n
    m3 = math.fsum((x - mean) ** 3 for x in xs) / n
    m4 = math.fsum((x - mean) ** 4 for x in xs) / n
    xs.sort()
    median = xs[(n + 1) // 2 - 1]
    return mean, median, m2, m3, m4


class TestRatingScale:
    def test_default_is_one_to_ten(self):
        assert DEFAULT_SCALE.num_levels == 10
        np.testing.assert_array_equal(DEFAULT_SCALE.values, np.arange(1.0, 11.0))

    def test_integer_constructor(self):
        assert RatingScale.integer(5, start=0).level_values == (0.0, 1.0, 2.0, 3.0, 4.0)

    @pytest.mark.parametrize("levels", [(1.0,), (1.0, 1.0), (2.0, 1.0, 3.0)])
    def test_rejects_bad_levels(self, levels):
        with pytest.raises(ValueError):
            RatingScale(levels)


class TestRatingSet:
    def test_from_ratings_tallies(self):
        rs = RatingSet.from_ratings([1, 1, 5, 10, 10, 10])
        assert rs.counts == (2, 0, 0, 0, 1, 0, 0, 0, 0, 3)
        assert rs.num_ratings == 6

    def test_off_scale_rating_rejected(self):
        with pytest.raises(ValueError, match="not a level"):
            RatingSet.from_ratings([1, 11])

    def test_wrong_length(self):
        with pytest.raises(ScaleMismatchError):
            RatingSet((1, 2, 3))

    def test_negative_count(self):
        with pytest.raises(ValueError):
            RatingSet((1, -1, 0, 0, 0, 0, 0, 0, 0, 0))


class TestHistogramFromRatings:
    @pytest.mark.parametrize("L", [1, 7, 300])
    def test_point_mass(self, L):
        h = histogram_from_ratings(RatingSet((0, 0, 0, 0, L, 0, 0, 0, 0, 0)))
        expected = np.zeros(10)
        expected[4] = 1.0
        np.testing.assert_array_equal(h.probs, expected)

    def test_uniform(self):
        h = histogram_from_ratings(RatingSet((1,) * 10))
        np.testing.assert_allclose(h.probs, 0.1, rtol=0, atol=1e-15)

    def test_hand_divided(self):
        h = histogram_from_ratings(RatingSet((0, 0, 2, 6, 10, 12, 8, 2, 0, 0)))
        np.testing.assert_allclose(
            h.probs, [0, 0, 0.05, 0.15, 0.25, 0.30, 0.20, 0.05, 0, 0], rtol=0, atol=1e-15
        )

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty ratings"):
            histogram_from_ratings(RatingSet((0,) * 10))

    @given(counts_strategy)
    def test_sums_to_one(self, counts):
        h = histogram_from_ratings(RatingSet(tuple(counts)))
        assert abs(h.probs.sum() - 1.0) <= 1e-9


class TestScoreHistogram:
    def test_probs_are_read_only(self):
        h = ScoreHistogram(np.full(10, 0.1))
        with pytest.raises(ValueError):
            h.probs[0] = 0.5

    def test_rejects_unnormalized(self):
        with pytest.raises(ValueError, match="sums to"):
            ScoreHistogram(np.full(10, 0.2))

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            ScoreHistogram(np.array([1.5, -0.5] + [0.0] * 8))

    def test_scale_mismatch(self):
        with pytest.raises(ScaleMismatchError):
            ScoreHistogram(np.full(5, 0.2))

    def test_mirrored(self):
        p = np.array([0.5, 0.3, 0.2] + [0.0] * 7)
        np.testing.assert_array_equal(ScoreHistogram(p).mirrored().probs, p[::-1])

    def test_degenerate_flag(self):
        assert ScoreHistogram(np.eye(10)[3]).is_degenerate
        assert not ScoreHistogram(np.full(10, 0.1)).is_degenerate


class TestCumulative:
    def test_point_mass_first_bin(self):
        np.testing.assert_array_equal(cumulative(ScoreHistogram(np.eye(10)[0])).cum, np.ones(10))

    def test_uniform(self):
        c = cumulative(ScoreHistogram(np.full(10, 0.1))).cum
        np.testing.assert_allclose(c, np.arange(1, 11) / 10, atol=1e-15)

    def test_running_sum(self):
        h = ScoreHistogram(np.array([0, 0, 0.05, 0.15, 0.25, 0.30, 0.20, 0.05, 0, 0]))
        np.testing.assert_allclose(
            cumulative(h).cum, [0, 0, 0.05, 0.20, 0.45, 0.75, 0.95, 1, 1, 1], atol=1e-15
        )

    @given(counts_strategy)
    def test_monotone_and_ends_at_one(self, counts):
        c = cumulative(histogram_from_ratings(RatingSet(tuple(counts)))).cum
        assert np.all(np.diff(c) >= 0.0)
        assert c[-1] == 1.0
        assert np.all((c >= 0.0) & (c <= 1.0))


class TestDistributionStats:
    def test_uniform(self):
        s = distribution_stats(ScoreHistogram(np.full(10, 0.1)))
        assert s.mean == pytest.approx(5.5, abs=1e-12)
        assert s.median == 5.0
        assert s.skewness == pytest.approx(0.0, abs=1e-12)
        # discrete uniform over 10 levels: variance (n^2 - 1) / 12
        assert s.variance == pytest.approx(99 / 12, abs=1e-12)
        assert s.kurtosis == pytest.approx(1.7757575757575759, abs=1e-12)

    def test_symmetric_about_six(self):
        s = distribution_stats(ScoreHistogram(np.array([0, 0, 0, 0.1, 0.2, 0.4, 0.2, 0.1, 0, 0])))
        assert s.mean == pytest.approx(6.0, abs=1e-12)
        assert s.median == 6.0
        assert s.variance == pytest.approx(1.2, abs=1e-12)
        assert s.skewness == pytest.approx(0.0, abs=1e-12)

    def test_point_mass(self):
        s = distribution_stats(ScoreHistogram(np.eye(10)[6]))
        assert (s.mean, s.median, s.variance) == (7.0, 7.0, 0.0)
        assert s.degenerate
        assert s.skewness is None and s.kurtosis is None

    def test_kurtosis_raises_on_degenerate(self):
        with pytest.raises(DegenerateDistributionError):
            kurtosis(ScoreHistogram(np.eye(10)[6]))

    def test_discretized_gaussian_kurtosis_near_three(self):
        # bin a finely sampled N(5.5, 1.5) onto 1..10 with plain loops
        xs = np.linspace(-4.0, 15.0, 190001)
        dens = np.exp(-0.5 * ((xs - 5.5) / 1.5) ** 2)
        probs = [0.0] * 10
        for x, d in zip(xs, dens):
            probs[min(max(int(round(x)), 1), 10) - 1] += d
        total = sum(probs)
        s = distribution_stats(ScoreHistogram(np.array(probs) / total))
        assert 2.5 <= s.kurtosis <= 3.5

    def test_median_is_smallest_level_reaching_half(self):
        s = distribution_stats(ScoreHistogram(np.array([0.5, 0.5] + [0.0] * 8)))
        assert s.median == 1.0

    def test_custom_scale(self):
        scale = RatingScale((0.0, 0.5, 2.0))
        s = distribution_stats(ScoreHistogram(np.array([0.25, 0.5, 0.25]), scale))
        assert s.mean == pytest.approx(0.75)
        assert s.median == 0.5

    @settings(max_examples=200)
    @given(counts_strategy)
    def test_matches_expanded_multiset(self, counts):
        h = histogram_from_ratings(RatingSet(tuple(counts)))
        s = distribution_stats(h)
        mean, median, m2, m3, m4 = brute_force_stats(counts, range(1, 11))
        assert s.mean == pytest.approx(mean, abs=1e-9)
        assert s.median == median
        assert s.variance == pytest.approx(m2, abs=1e-9)
        if m2 > 1e-12:
            assert s.skewness == pytest.approx(m3 / m2**1.5, abs=1e-9)
            assert s.kurtosis == pytest.approx(m4 / m2**2, abs=1e-9)

    @given(counts_strategy)
    def test_mirroring_negates_skewness(self, counts):
        h = histogram_from_ratings(RatingSet(tuple(counts)))
        if h.is_degenerate:
            return
        a, b = distribution_stats(h), distribution_stats(h.mirrored())
        assert b.skewness == pytest.approx(-a.skewness, abs=1e-9)
        assert b.kurtosis == pytest.approx(a.kurtosis, abs=1e-9)
        assert b.variance == pytest.approx(a.variance, abs=1e-9)
        assert a.mean + b.mean == pytest.approx(11.0, abs=1e-12)

    @given(counts_strategy)
    def test_invariants(self, counts):
        s = distribution_stats(histogram_from_ratings(RatingSet(tuple(counts))))
        assert s.variance >= 0.0
        assert 1.0 - 1e-12 <= s.mean <= 10.0 + 1e-12
        assert s.median in range(1, 11)
