import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scoredist import evaluation
from scoredist.dataio import SyntheticSpec, generate_population, generate_synthetic
from scoredist.divergence import MD_COLUMNS, DivergenceKind, divergence
from scoredist.evaluation import (
    Regime,
    box_summary,
    md_matrix,
    md_report,
    mean_divergence,
    parse_regimes,
    per_sample_divergence,
    report_tables,
    subjectiveness_report,
)
from scoredist.histogram import ScoreHistogram
from scoredist.trainer import TrainConfig


@pytest.fixture(scope="module")
def tiny():
    return generate_synthetic(SyntheticSpec(n_samples=120, feature_dim=4, seed=4))


class TestMeanDivergence:
    def test_identical_sets(self):
        rng = np.random.default_rng(0)
        ys = list(rng.dirichlet(np.ones(10), 20))
        for kind in DivergenceKind:
            v = mean_divergence(ys, ys, kind)
            if kind is DivergenceKind.PCE:
                assert v > 0.0
            else:
                assert v <= 1e-12

    def test_two_samples(self):
        a = np.array([1.0, 0.0])
        b = np.array([0.0, 1.0])
        assert mean_divergence([b, a], [a, a], "cjs") == 0.25

    def test_equals_mean_of_single_calls(self):
        rng = np.random.default_rng(1)
        preds = list(rng.dirichlet(np.ones(10), 50))
        truths = list(rng.dirichlet(np.ones(10), 50))
        for kind in DivergenceKind:
            per = per_sample_divergence(preds, truths, kind)
            np.testing.assert_array_equal(per, [divergence(kind, t, p) for p, t in zip(preds, truths)])
            assert mean_divergence(preds, truths, kind) == pytest.approx(np.mean(per), rel=1e-15)

    @settings(max_examples=25)
    @given(st.integers(0, 10**6))
    def test_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        preds = rng.dirichlet(np.ones(10), 30)
        truths = rng.dirichlet(np.ones(10), 30)
        perm = rng.permutation(30)
        a = mean_divergence(list(preds), list(truths), "cjs")
        b = mean_divergence(list(preds[perm]), list(truths[perm]), "cjs")
        assert a == b

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            mean_divergence([np.full(10, 0.1)], [], "ped")

    def test_accepts_histogram_objects(self):
        h = ScoreHistogram(np.full(10, 0.1))
        assert mean_divergence([h], [h], "ced") == 0.0

    def test_report_columns(self):
        ys = [np.full(10, 0.1)]
        rep = md_report(ys, ys)
        assert list(rep.values) == list(MD_COLUMNS)
        assert rep.n == 1


class TestRegimes:
    def test_labels(self):
        assert Regime("cjs").label == "CJS"
        assert Regime("huber", "kurtosis").label == "RS-Huber"
        assert Regime("ped", "count").label == "RC-PED"
        assert Regime("cjs", "blend", 0.3).label == "RS-CJS (lambda=0.3)"

    def test_lambda_grid(self):
        regimes = parse_regimes(["cjs:blend:0,0.1,0.3,0.5,0.7,0.9,1.0"])
        assert [r.lam for r in regimes] == [0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
        assert all(r.mode == "blend" for r in regimes)

    def test_all(self):
        regimes = parse_regimes(["all"])
        assert len(regimes) == 16
        assert regimes[:2] == [Regime("ped"), Regime("ped", "kurtosis")]

    def test_mixed_and_semicolons(self):
        regimes = parse_regimes(["cjs;cjs:kurtosis", "ped:none"])
        assert [r.label for r in regimes] == ["CJS", "RS-CJS", "PED"]

    @pytest.mark.parametrize("spec", ["cjs:blend", "cjs:kurtosis:0.5", "nope", "cjs:a:b:c", ""])
    def test_invalid(self, spec):
        with pytest.raises(ValueError):
            parse_regimes([spec])


class TestMatrix:
    def test_shape_and_cells_rederived(self, tiny):
        train_set, test_set = tiny
        regimes = parse_regimes(["cjs", "cjs:kurtosis", "ped"])
        m = md_matrix(train_set, test_set, regimes, TrainConfig(max_iters=20))
        assert m.shape == (3, 7)
        truths = [s.target for s in test_set]
        for i, preds in enumerate(m.predictions):
            for j, kind in enumerate(MD_COLUMNS):
                assert m.cells[i, j] == mean_divergence(list(preds), truths, kind)

    def test_one_sample_limit(self, tiny):
        one = tiny[0][:1]
        cfg = TrainConfig(max_iters=2000, batch_size=1, lr_step_iters=10**6)
        m = md_matrix(one, one, [Regime("cjs")], cfg)
        assert m.cells[0, MD_COLUMNS.index(DivergenceKind.CJS)] < 1e-3

    def test_failed_regime_is_marked(self, tiny, monkeypatch):
        real = evaluation._run_regime

        def flaky(args):
            if args[0].kind is DivergenceKind.PKL:
                raise FloatingPointError("boom")
            return real(args)

        monkeypatch.setattr(evaluation, "_run_regime", flaky)
        m = md_matrix(*tiny, parse_regimes(["cjs", "pkl"]), TrainConfig(max_iters=5))
        assert m.failures == {"PKL": "boom"}
        assert np.all(np.isnan(m.cells[1])) and np.all(np.isfinite(m.cells[0]))
        assert "PKL\tfailed" in m.to_tsv()

    def test_parallel_matches_serial(self, tiny):
        regimes = parse_regimes(["cjs", "cjs:blend:0.5"])
        cfg = TrainConfig(max_iters=15)
        a = md_matrix(*tiny, regimes, cfg, jobs=1)
        b = md_matrix(*tiny, regimes, cfg, jobs=2)
        np.testing.assert_array_equal(a.cells, b.cells)

    def test_tsv_layout(self, tiny):
        m = md_matrix(*tiny, [Regime("cjs")], TrainConfig(max_iters=3))
        header, row = m.to_tsv().splitlines()
        assert header.split("\t") == ["loss", "PED", "PCE", "PJS", "PCS", "PKL", "CED", "CJS"]
        assert row.startswith("CJS\t")

    def test_empty_inputs(self, tiny):
        with pytest.raises(ValueError):
            md_matrix([], tiny[1], [Regime("cjs")], TrainConfig())


class TestBoxSummary:
    def test_known_values(self):
        s = box_summary([1, 2, 3, 4, 5, 6, 7, 8, 100])
        assert (s.q1, s.median, s.q3) == (3.0, 5.0, 7.0)
        assert s.outliers == [100.0]
        assert (s.lower_whisker, s.upper_whisker) == (1.0, 8.0)

    def test_single_value(self):
        s = box_summary([2.5])
        assert (s.lower_whisker, s.q1, s.median, s.q3, s.upper_whisker) == (2.5,) * 5

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=60))
    def test_ordered(self, values):
        s = box_summary(values)
        assert s.lower_whisker <= s.q1 <= s.median <= s.q3 <= s.upper_whisker
        assert s.count == len(values)


class TestSubjectiveness:
    def test_identical_histograms(self):
        h = ScoreHistogram(np.array([0, 0, 0.1, 0.2, 0.4, 0.2, 0.1, 0, 0, 0]))
        rep = subjectiveness_report([h] * 12)
        assert np.count_nonzero(rep.grid) == 1 and rep.grid.sum() == 12
        for s in rep.skewness_by_mean.values():
            assert s.lower_whisker == s.upper_whisker == s.median

    def test_symmetric_population(self):
        rng = np.random.default_rng(0)
        hists = []
        for _ in range(50):
            half = rng.dirichlet(np.ones(5))
            hists.append(ScoreHistogram(np.concatenate([half, half[::-1]]) / 2))
        rep = subjectiveness_report(hists)
        for s in rep.skewness_by_mean.values():
            assert abs(s.median) < 1e-9

    def test_grid_total_plus_degenerate(self):
        hists = generate_population(200, seed=2) + [ScoreHistogram(np.eye(10)[3])] * 5
        rep = subjectiveness_report(hists)
        assert rep.n_degenerate == 5
        assert rep.grid.sum() + rep.n_degenerate == len(hists)

    def test_all_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            subjectiveness_report([ScoreHistogram(np.eye(10)[0])])

    def test_max_mean_lands_in_last_bin(self):
        rep = subjectiveness_report([ScoreHistogram(np.array([0.0] * 8 + [0.5, 0.5]))])
        assert rep.grid[-1].sum() == 1
        assert rep.mean_edges[-1] == 10.0

    def test_decreasing_skewness_trend(self):
        rep = subjectiveness_report(generate_population(3000, seed=0))
        medians = [s.median for _, s in sorted(rep.skewness_by_mean.items())]
        assert medians[0] > 0 > medians[-1]
        assert all(a > b for a, b in zip(medians, medians[1:]))

    def test_tables(self):
        rep = subjectiveness_report(generate_population(100, seed=1))
        tables = report_tables(rep)
        assert set(tables) == {"mean_std_grid", "skewness_by_mean", "kurtosis_by_mean",
                               "mean_by_skewness", "median_by_skewness", "summary"}
        assert tables["summary"] == "valid\t100\ndegenerate\t0\n"
        header = tables["skewness_by_mean"].splitlines()[0]
        assert header.startswith("mean_bin\tcount\tlower_whisker")
